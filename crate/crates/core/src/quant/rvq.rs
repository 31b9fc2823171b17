//! Residual vector quantization of weighted colors.

use crate::error::{Error, Result};

use super::kmeans::{kmeans_init, nearest};

pub const DEFAULT_EMA_DECAY: f64 = 0.99;
const EMA_EPS: f64 = 1e-12;

/// One stage: `B` codewords plus the EMA accumulators behind them.
#[derive(Debug, Clone, PartialEq)]
pub struct CodebookStage {
    pub codewords: Vec<[f32; 3]>,
    pub cluster_size: Vec<f64>,
    pub cluster_sum: Vec<[f64; 3]>,
}

impl CodebookStage {
    pub fn from_codewords(codewords: Vec<[f32; 3]>) -> Self {
        let b = codewords.len();
        Self {
            codewords,
            cluster_size: vec![0.0; b],
            cluster_sum: vec![[0.0; 3]; b],
        }
    }

    pub fn len(&self) -> usize {
        self.codewords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codewords.is_empty()
    }

    fn codewords_f64(&self) -> Vec<[f64; 3]> {
        self.codewords.iter().map(|c| c.map(f64::from)).collect()
    }
}

/// `M` cascaded codebooks of `B` vectors each.
#[derive(Debug, Clone, PartialEq)]
pub struct RvqCodebook {
    pub stages: Vec<CodebookStage>,
    pub decay: f64,
}

/// Greedy RVQ assignment of one color.
#[derive(Debug, Clone, PartialEq)]
pub struct RvqCode {
    pub indices: Vec<usize>,
    /// `ĉ′ = Σ_m C^m[i^m]`, accumulated in `f32` stage by stage.
    pub reconstruction: [f32; 3],
    /// Residual entering each stage, `c′ − ĉ′^{m−1}`.
    pub residuals: Vec<[f64; 3]>,
}

impl RvqCodebook {
    pub fn new(stages: Vec<Vec<[f32; 3]>>, decay: f64) -> Result<Self> {
        if stages.is_empty() || stages.iter().any(|s| s.is_empty() || s.len() != stages[0].len()) {
            return Err(Error::InvalidConfig(
                "codebook needs M >= 1 stages of equal, non-zero size".into(),
            ));
        }
        if stages.iter().flatten().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("codebook vectors must be finite".into()));
        }
        Ok(Self {
            stages: stages.into_iter().map(CodebookStage::from_codewords).collect(),
            decay,
        })
    }

    /// Stage-by-stage k-means on the running residuals.
    pub fn kmeans(colors: &[[f64; 3]], stages: usize, size: usize, iters: usize, seed: u64, decay: f64) -> Result<Self> {
        if stages == 0 {
            return Err(Error::InvalidConfig("need at least one RVQ stage".into()));
        }
        let mut residual = colors.to_vec();
        let mut out = Vec::with_capacity(stages);
        for m in 0..stages {
            let km = kmeans_init(&residual, size, iters, seed.wrapping_add(m as u64))?;
            let codewords: Vec<[f32; 3]> = km.centroids.iter().map(|c| c.map(|v| v as f32)).collect();
            let mut stage = CodebookStage::from_codewords(codewords);
            for (r, &a) in residual.iter_mut().zip(&km.assignments) {
                let cw = stage.codewords[a].map(f64::from);
                stage.cluster_size[a] += 1.0;
                for i in 0..3 {
                    stage.cluster_sum[a][i] += cw[i];
                    r[i] -= cw[i];
                }
            }
            out.push(stage);
        }
        Ok(Self { stages: out, decay })
    }

    pub fn num_stages(&self) -> usize {
        self.stages.len()
    }

    pub fn size(&self) -> usize {
        self.stages[0].len()
    }

    pub fn codewords(&self) -> Vec<Vec<[f32; 3]>> {
        self.stages.iter().map(|s| s.codewords.clone()).collect()
    }

    pub fn encode(&self, color: [f64; 3]) -> RvqCode {
        rvq_encode(color, self)
    }

    /// Applies one EMA update per stage from a batch of greedy assignments.
    pub fn ema_update_batch(&mut self, codes: &[RvqCode]) {
        let decay = self.decay;
        for (m, stage) in self.stages.iter_mut().enumerate() {
            let vectors: Vec<[f64; 3]> = codes.iter().map(|c| c.residuals[m]).collect();
            let assignments: Vec<usize> = codes.iter().map(|c| c.indices[m]).collect();
            ema_update(stage, &vectors, &assignments, decay);
        }
    }
}

pub fn rvq_encode(color: [f64; 3], book: &RvqCodebook) -> RvqCode {
    let mut indices = Vec::with_capacity(book.num_stages());
    let mut residuals = Vec::with_capacity(book.num_stages());
    let mut recon = [0.0f32; 3];
    for stage in &book.stages {
        let residual = [
            color[0] - f64::from(recon[0]),
            color[1] - f64::from(recon[1]),
            color[2] - f64::from(recon[2]),
        ];
        let (k, _) = nearest(&residual, &stage.codewords_f64());
        let cw = stage.codewords[k];
        for i in 0..3 {
            recon[i] += cw[i];
        }
        indices.push(k);
        residuals.push(residual);
    }
    RvqCode {
        indices,
        reconstruction: recon,
        residuals,
    }
}

/// Sum of the selected codewords, in the same `f32` order as [`rvq_encode`].
pub fn rvq_decode(indices: &[usize], codebooks: &[Vec<[f32; 3]>]) -> [f32; 3] {
    let mut recon = [0.0f32; 3];
    for (stage, &k) in codebooks.iter().zip(indices) {
        for i in 0..3 {
            recon[i] += stage[k][i];
        }
    }
    recon
}

/// `(1 / (N·B)) Σ_m Σ_n ‖sg[c′_n − ĉ′^{m−1}_n] − C^m[i^m_n]‖²`.
pub fn commitment_loss(colors: &[[f64; 3]], book: &RvqCodebook) -> f64 {
    if colors.is_empty() {
        return 0.0;
    }
    let mut sum = 0.0;
    for &c in colors {
        let code = rvq_encode(c, book);
        for (m, r) in code.residuals.iter().enumerate() {
            let cw = book.stages[m].codewords[code.indices[m]].map(f64::from);
            sum += (0..3).map(|i| (r[i] - cw[i]).powi(2)).sum::<f64>();
        }
    }
    sum / (colors.len() * book.size()) as f64
}

/// Exponential-moving-average codebook update for one stage. Entries with
/// no assignment in the batch are left untouched.
pub fn ema_update(stage: &mut CodebookStage, vectors: &[[f64; 3]], assignments: &[usize], decay: f64) {
    let b = stage.len();
    let mut counts = vec![0.0f64; b];
    let mut sums = vec![[0.0f64; 3]; b];
    for (v, &a) in vectors.iter().zip(assignments) {
        counts[a] += 1.0;
        for i in 0..3 {
            sums[a][i] += v[i];
        }
    }
    for k in 0..b {
        if counts[k] == 0.0 {
            continue;
        }
        stage.cluster_size[k] = decay * stage.cluster_size[k] + (1.0 - decay) * counts[k];
        let size = stage.cluster_size[k].max(EMA_EPS);
        for i in 0..3 {
            stage.cluster_sum[k][i] = decay * stage.cluster_sum[k][i] + (1.0 - decay) * sums[k][i];
            stage.codewords[k][i] = (stage.cluster_sum[k][i] / size) as f32;
        }
    }
}

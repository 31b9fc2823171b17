//! Partial bits-back coding of an unordered set of fixed-width records.
//!
//! Encoder: push the first `K` records, pop a multiset permutation of the
//! remaining `N − K` out of the stream, push those records in the popped
//! order, then push `N − K`. The decoder runs the same steps backwards.

use crate::codec::RecordLayout;
use crate::error::{Error, Result};
use crate::quant::QuantizedGaussian;

use super::plan::BbPlan;
use super::rans::{Rans64, PRECISION};

/// Counts over a sorted list of distinct values with prefix sums and
/// rank selection in `O(log D)`.
#[derive(Debug, Clone)]
struct Multiset {
    tree: Vec<u64>,
    counts: Vec<u64>,
    total: u64,
}

impl Multiset {
    fn with_len(len: usize) -> Self {
        Self {
            tree: vec![0; len + 1],
            counts: vec![0; len],
            total: 0,
        }
    }

    fn add(&mut self, i: usize, delta: i64) {
        self.counts[i] = self.counts[i].wrapping_add_signed(delta);
        self.total = self.total.wrapping_add_signed(delta);
        let mut j = i + 1;
        while j < self.tree.len() {
            self.tree[j] = self.tree[j].wrapping_add_signed(delta);
            j += j & j.wrapping_neg();
        }
    }

    /// Number of elements strictly before value `i`.
    fn prefix(&self, i: usize) -> u64 {
        let mut s = 0;
        let mut j = i;
        while j > 0 {
            s += self.tree[j];
            j &= j - 1;
        }
        s
    }

    /// The value holding the element of rank `c`.
    fn select(&self, mut c: u64) -> usize {
        let mut pos = 0;
        let mut step = (self.tree.len() - 1).next_power_of_two();
        while step > 0 {
            let next = pos + step;
            if next < self.tree.len() && self.tree[next] <= c {
                pos = next;
                c -= self.tree[next];
            }
            step >>= 1;
        }
        pos
    }

    /// `(first rank, multiplicity)` of value `i`.
    fn run(&self, i: usize) -> (u64, u64) {
        (self.prefix(i), self.counts[i])
    }
}

fn distinct(records: &[QuantizedGaussian]) -> (Vec<QuantizedGaussian>, Vec<u64>) {
    let mut sorted = records.to_vec();
    sorted.sort_unstable();
    let mut values: Vec<QuantizedGaussian> = Vec::new();
    let mut counts = Vec::new();
    for r in sorted {
        if values.last() == Some(&r) {
            *counts.last_mut().unwrap() += 1;
        } else {
            values.push(r);
            counts.push(1);
        }
    }
    (values, counts)
}

fn push_record(coder: &mut Rans64, layout: RecordLayout, g: &QuantizedGaussian) {
    let fields = layout.fields(g);
    let widths: Vec<u32> = layout.field_widths().collect();
    for (&v, &w) in fields.iter().zip(&widths).rev() {
        if w > 0 {
            coder.encode_bits(v, w);
        }
    }
}

fn pop_record(coder: &mut Rans64, layout: RecordLayout) -> Result<QuantizedGaussian> {
    let mut fields = Vec::with_capacity(5 + layout.stages);
    for w in layout.field_widths() {
        fields.push(if w > 0 { coder.decode_bits(w)? } else { 0 });
    }
    Ok(layout.from_fields(&fields))
}

fn check_layout(n: usize, layout: RecordLayout) -> Result<()> {
    if n == 0 || n as u64 >= 1 << PRECISION {
        return Err(Error::InvalidConfig(format!("bits-back coding needs 1 <= N < 2^{PRECISION}")));
    }
    if layout.cov_bits > PRECISION || layout.index_bits > PRECISION {
        return Err(Error::InvalidConfig("field wider than the coder precision".into()));
    }
    Ok(())
}

/// Length in bits of the same coder pushing every record in order.
pub fn plain_ans_len(records: &[QuantizedGaussian], layout: RecordLayout) -> u64 {
    let mut coder = Rans64::new();
    for g in records {
        push_record(&mut coder, layout, g);
    }
    coder.bit_len()
}

/// Encodes with `records[..k]` coded plainly. Fails with `StreamExhausted`
/// when those records do not carry enough bits for the permutation.
pub fn bb_encode_with_k(records: &[QuantizedGaussian], layout: RecordLayout, k: usize) -> Result<Vec<u8>> {
    let n = records.len();
    check_layout(n, layout)?;
    if k > n {
        return Err(Error::InvalidConfig(format!("K = {k} exceeds N = {n}")));
    }
    let mut coder = Rans64::new();
    for g in records[..k].iter().rev() {
        push_record(&mut coder, layout, g);
    }

    let (values, counts) = distinct(&records[k..]);
    let mut set = Multiset::with_len(values.len());
    for (i, &c) in counts.iter().enumerate() {
        set.add(i, c as i64);
    }
    let mut order = Vec::with_capacity(n - k);
    while set.total > 0 {
        let r = set.total;
        let v = set.select(coder.peek_uniform(r));
        let (first, count) = set.run(v);
        coder.decode_uniform_run(first, count, r)?;
        set.add(v, -1);
        order.push(v);
    }
    for &v in &order {
        push_record(&mut coder, layout, &values[v]);
    }
    coder.encode_uniform((n - k) as u64, n as u64 + 1);
    Ok(coder.to_bytes())
}

/// Encodes with the smallest sufficient `K`, growing it if the coder runs
/// dry on a boundary case.
pub fn bb_encode(records: &[QuantizedGaussian], layout: RecordLayout) -> Result<Vec<u8>> {
    check_layout(records.len(), layout)?;
    let plan = BbPlan::new(records.len() as u64, layout.record_bits());
    let mut k = plan.k as usize;
    loop {
        match bb_encode_with_k(records, layout, k) {
            Err(Error::StreamExhausted) if k < records.len() => k += 1,
            other => return other,
        }
    }
}

/// Decodes `n` records. The plainly coded records come first, then the
/// set-coded ones.
pub fn bb_decode(bytes: &[u8], n: usize, layout: RecordLayout) -> Result<Vec<QuantizedGaussian>> {
    check_layout(n, layout).map_err(|e| Error::CorruptStream(e.to_string()))?;
    let mut coder = Rans64::from_bytes(bytes)?;
    let m = coder.decode_uniform(n as u64 + 1)? as usize;
    let k = n - m;

    let mut popped = Vec::new();
    for _ in 0..m {
        popped.push(pop_record(&mut coder, layout)?);
    }
    let (values, _) = distinct(&popped);
    let mut set = Multiset::with_len(values.len());
    for g in &popped {
        let v = values.binary_search(g).expect("value present");
        set.add(v, 1);
        let (first, count) = set.run(v);
        coder.encode_uniform_run(first, count, set.total);
    }

    let mut out = Vec::with_capacity(n);
    for _ in 0..k {
        out.push(pop_record(&mut coder, layout)?);
    }
    if !coder.is_empty() {
        return Err(Error::CorruptStream(format!(
            "{} words left after decoding {n} records",
            coder.word_count()
        )));
    }
    out.extend(popped.into_iter().rev());
    Ok(out)
}

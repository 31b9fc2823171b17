//! `.gsi` bitstream: a little-endian header with the quantization metadata,
//! followed by either fixed-width MSB-first packed records or a bits-back
//! stream.

mod bits;

pub use bits::{BitReader, BitWriter};

use crate::bitsback::{bb_decode, bb_encode};
use crate::error::{Error, Result};
use crate::metrics::bits_per_pixel;
use crate::model::FactorizationKind;
use crate::quant::{index_bits, QuantizedCloud, QuantizedGaussian};

pub const MAGIC: [u8; 4] = *b"GSI1";
pub const VERSION: u8 = 1;
/// Header flag: the payload is a bits-back stream.
pub const FLAG_BITS_BACK: u8 = 0x01;
pub const FILE_EXTENSION: &str = "gsi";

/// Field widths of one packed Gaussian.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RecordLayout {
    pub cov_bits: u32,
    pub stages: usize,
    pub index_bits: u32,
}

impl RecordLayout {
    pub fn of(qc: &QuantizedCloud) -> Self {
        Self {
            cov_bits: u32::from(qc.bits),
            stages: qc.stages(),
            index_bits: qc.index_bits(),
        }
    }

    pub fn record_bits(&self) -> u32 {
        32 + 3 * self.cov_bits + self.stages as u32 * self.index_bits
    }

    /// Widths of the fields in packing order.
    pub fn field_widths(&self) -> impl Iterator<Item = u32> + '_ {
        [16, 16, self.cov_bits, self.cov_bits, self.cov_bits]
            .into_iter()
            .chain(std::iter::repeat_n(self.index_bits, self.stages))
    }

    pub fn fields(&self, g: &QuantizedGaussian) -> Vec<u32> {
        let mut out = Vec::with_capacity(5 + self.stages);
        out.extend(g.position.iter().map(|&p| u32::from(p)));
        out.extend(g.cov_codes.iter().map(|&c| u32::from(c)));
        out.extend(g.color_indices.iter().map(|&i| u32::from(i)));
        out
    }

    pub fn from_fields(&self, f: &[u32]) -> QuantizedGaussian {
        QuantizedGaussian {
            position: [f[0] as u16, f[1] as u16],
            cov_codes: [f[2] as u16, f[3] as u16, f[4] as u16],
            color_indices: f[5..].iter().map(|&i| i as u8).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BitstreamHeader {
    pub version: u8,
    pub width: u32,
    pub height: u32,
    pub num_gaussians: u32,
    pub kind: FactorizationKind,
    pub bits: u8,
    pub stages: u8,
    pub codebook_size: u8,
    pub gamma: [f32; 3],
    pub beta: [f32; 3],
    pub codebooks: Vec<Vec<[f32; 3]>>,
    pub kmeans_seed: u64,
    pub flags: u8,
}

impl BitstreamHeader {
    pub fn from_cloud(qc: &QuantizedCloud, flags: u8) -> Result<Self> {
        qc.validate()?;
        let n = u32::try_from(qc.len()).map_err(|_| Error::InvalidConfig("too many Gaussians".into()))?;
        Ok(Self {
            version: VERSION,
            width: qc.width,
            height: qc.height,
            num_gaussians: n,
            kind: qc.kind,
            bits: qc.bits,
            stages: qc.stages() as u8,
            codebook_size: qc.codebook_size() as u8,
            gamma: qc.gamma,
            beta: qc.beta,
            codebooks: qc.codebooks.clone(),
            kmeans_seed: qc.kmeans_seed,
            flags,
        })
    }

    /// Serialized size in bytes.
    pub fn byte_len(&self) -> usize {
        Self::len_for(usize::from(self.stages), usize::from(self.codebook_size))
    }

    fn len_for(stages: usize, size: usize) -> usize {
        4 + 1 + 12 + 4 + 24 + stages * size * 12 + 8 + 1
    }

    pub fn is_bits_back(&self) -> bool {
        self.flags & FLAG_BITS_BACK != 0
    }

    pub fn layout(&self) -> RecordLayout {
        RecordLayout {
            cov_bits: u32::from(self.bits),
            stages: usize::from(self.stages),
            index_bits: index_bits(usize::from(self.codebook_size)),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.byte_len());
        out.extend_from_slice(&MAGIC);
        out.push(self.version);
        out.extend_from_slice(&self.width.to_le_bytes());
        out.extend_from_slice(&self.height.to_le_bytes());
        out.extend_from_slice(&self.num_gaussians.to_le_bytes());
        out.extend_from_slice(&[self.kind.to_byte(), self.bits, self.stages, self.codebook_size]);
        for v in self.gamma.iter().chain(&self.beta) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in self.codebooks.iter().flatten().flatten() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&self.kmeans_seed.to_le_bytes());
        out.push(self.flags);
        out
    }

    /// Parses a header, returning it with the number of bytes consumed.
    pub fn parse(bytes: &[u8]) -> Result<(Self, usize)> {
        let truncated = |expected: usize| Error::TruncatedPayload {
            expected,
            found: bytes.len(),
        };
        if bytes.len() < 4 {
            return Err(truncated(4));
        }
        if bytes[..4] != MAGIC {
            return Err(Error::CorruptHeader(format!("bad magic {:02x?}", &bytes[..4])));
        }
        if bytes.len() < 5 {
            return Err(truncated(5));
        }
        if bytes[4] != VERSION {
            return Err(Error::UnknownVersion(bytes[4]));
        }
        if bytes.len() < 21 {
            return Err(truncated(21));
        }
        let (stages, size) = (bytes[19], bytes[20]);
        let len = Self::len_for(usize::from(stages), usize::from(size));
        if bytes.len() < len {
            return Err(truncated(len));
        }

        let mut cur = Cursor { bytes, pos: 5 };
        let width = cur.u32();
        let height = cur.u32();
        let num_gaussians = cur.u32();
        let kind = FactorizationKind::from_byte(cur.u8())
            .ok_or_else(|| Error::CorruptHeader(format!("unknown factorization kind {}", bytes[17])))?;
        let bits = cur.u8();
        cur.pos += 2;
        let gamma = [cur.f32(), cur.f32(), cur.f32()];
        let beta = [cur.f32(), cur.f32(), cur.f32()];
        let codebooks = (0..stages)
            .map(|_| (0..size).map(|_| [cur.f32(), cur.f32(), cur.f32()]).collect())
            .collect();
        let kmeans_seed = cur.u64();
        let flags = cur.u8();
        debug_assert_eq!(cur.pos, len);

        if width == 0 || height == 0 || num_gaussians == 0 {
            return Err(Error::CorruptHeader("zero width, height or Gaussian count".into()));
        }
        if !(1..=16).contains(&bits) || stages == 0 || size == 0 {
            return Err(Error::CorruptHeader(format!(
                "invalid quantizer settings b={bits} M={stages} B={size}"
            )));
        }
        if flags & !FLAG_BITS_BACK != 0 {
            return Err(Error::CorruptHeader(format!("unknown flags {flags:#04x}")));
        }
        Ok((
            Self {
                version: VERSION,
                width,
                height,
                num_gaussians,
                kind,
                bits,
                stages,
                codebook_size: size,
                gamma,
                beta,
                codebooks,
                kmeans_seed,
                flags,
            },
            len,
        ))
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take<const K: usize>(&mut self) -> [u8; K] {
        let out = self.bytes[self.pos..self.pos + K].try_into().unwrap();
        self.pos += K;
        out
    }

    fn u8(&mut self) -> u8 {
        self.take::<1>()[0]
    }

    fn u32(&mut self) -> u32 {
        u32::from_le_bytes(self.take())
    }

    fn u64(&mut self) -> u64 {
        u64::from_le_bytes(self.take())
    }

    fn f32(&mut self) -> f32 {
        f32::from_le_bytes(self.take())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedImage {
    pub header: BitstreamHeader,
    pub payload: Vec<u8>,
    /// Payload bits before byte padding.
    pub payload_bits: u64,
    /// Stored bits: header plus padded payload.
    pub total_bits: u64,
}

impl EncodedImage {
    fn new(header: BitstreamHeader, payload: Vec<u8>, payload_bits: u64) -> Self {
        let total_bits = 8 * (header.byte_len() + payload.len()) as u64;
        Self {
            header,
            payload,
            payload_bits,
            total_bits,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.header.to_bytes();
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn header_bits(&self) -> u64 {
        8 * self.header.byte_len() as u64
    }

    pub fn bpp(&self) -> f64 {
        bpp(self, self.header.width as usize, self.header.height as usize)
    }
}

/// Plain mode: records packed in stored order.
pub fn encode(qc: &QuantizedCloud) -> Result<EncodedImage> {
    let header = BitstreamHeader::from_cloud(qc, 0)?;
    let layout = RecordLayout::of(qc);
    let mut w = BitWriter::with_capacity_bits(qc.len() as u64 * u64::from(layout.record_bits()));
    for g in &qc.gaussians {
        for (v, n) in layout.fields(g).into_iter().zip(layout.field_widths()) {
            w.write(u64::from(v), n);
        }
    }
    let (payload, bits) = w.finish();
    Ok(EncodedImage::new(header, payload, bits))
}

/// Bits-back mode: records are coded as an unordered set.
pub fn encode_bits_back(qc: &QuantizedCloud) -> Result<EncodedImage> {
    let header = BitstreamHeader::from_cloud(qc, FLAG_BITS_BACK)?;
    let payload = bb_encode(&qc.gaussians, RecordLayout::of(qc))?;
    let bits = 8 * payload.len() as u64;
    Ok(EncodedImage::new(header, payload, bits))
}

/// Parses a `.gsi` byte stream.
pub fn decode_image(bytes: &[u8]) -> Result<EncodedImage> {
    let (header, used) = BitstreamHeader::parse(bytes)?;
    let payload = bytes[used..].to_vec();
    let bits = if header.is_bits_back() {
        8 * payload.len() as u64
    } else {
        let need = u64::from(header.num_gaussians) * u64::from(header.layout().record_bits());
        let need_bytes = need.div_ceil(8) as usize;
        if payload.len() < need_bytes {
            return Err(Error::TruncatedPayload {
                expected: used + need_bytes,
                found: bytes.len(),
            });
        }
        if payload.len() > need_bytes {
            return Err(Error::CorruptHeader(format!(
                "{} trailing bytes after {} records",
                payload.len() - need_bytes,
                header.num_gaussians
            )));
        }
        need
    };
    Ok(EncodedImage::new(header, payload, bits))
}

/// Decodes a `.gsi` byte stream into a quantized cloud. Nothing is returned
/// unless the whole stream decodes. Bits-back streams do not store record
/// order, so their records come back in canonical order.
pub fn decode(bytes: &[u8]) -> Result<QuantizedCloud> {
    let enc = decode_image(bytes)?;
    let h = &enc.header;
    let layout = h.layout();
    let n = h.num_gaussians as usize;
    let gaussians = if h.is_bits_back() {
        let mut v = bb_decode(&enc.payload, n, layout)?;
        v.sort_unstable();
        v
    } else {
        let mut r = BitReader::new(&enc.payload);
        let mut out = Vec::with_capacity(n);
        let mut fields = Vec::with_capacity(5 + layout.stages);
        for _ in 0..n {
            fields.clear();
            for width in layout.field_widths() {
                fields.push(r.read(width)? as u32);
            }
            out.push(layout.from_fields(&fields));
        }
        out
    };
    let qc = QuantizedCloud {
        width: h.width,
        height: h.height,
        kind: h.kind,
        bits: h.bits,
        gamma: h.gamma,
        beta: h.beta,
        codebooks: h.codebooks.clone(),
        kmeans_seed: h.kmeans_seed,
        gaussians,
    };
    qc.validate().map_err(|e| Error::CorruptStream(e.to_string()))?;
    Ok(qc)
}

/// Stored bits per pixel.
pub fn bpp(encoded: &EncodedImage, width: usize, height: usize) -> f64 {
    bits_per_pixel(encoded.total_bits, width, height)
}

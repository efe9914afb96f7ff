//! Bit-exact serialization of the compact PTQ state and calibration
//! checkpoints.
//!
//! Both file kinds share the same envelope conventions: a 4-byte magic, a
//! little-endian u32 version, a fixed little-endian field layout, and a
//! trailing FNV-1a 64 digest over every preceding byte. PTQ state files
//! use magic `TAQ4`; calibration checkpoints use magic `TAQC` and tag each
//! record with the ASCII kind `CALIB`.
//!
//! PTQ state layout (all integers and floats little-endian):
//!
//! ```text
//! offset  size  field
//! 0       4     magic "TAQ4"
//! 4       4     version (u32, currently 1)
//! 8       8     base_model_digest (u64)
//! 16      8     percentile_p (f64)
//! 24      8     alpha (f64)
//! 32      8     epsilon (f64)
//! 40      1     stat_kind (u8: 0 = max, 1 = percentile)
//! 41      1     exponent_bits (u8)
//! 42      1     mantissa_bits (u8)
//! 43      8     seed (u64)
//! 51      4     record_count (u32)
//! 55      ...   records, sorted by layer name, no duplicates
//! end-8   8     file digest (u64 FNV-1a over bytes [0, end-8))
//! ```
//!
//! Each record:
//!
//! ```text
//! name_len (u32), name (UTF-8 bytes)
//! in_features (u32), out_features (u32)
//! mask entries (f64 x in_features)
//! weight scales (f64 x out_features)
//! format (u8: exponent_bits << 4 | mantissa_bits)
//! rounding (u8: 0 = nearest, ties to even code index)
//! stat (u8, must equal the header stat_kind)
//! checksum (u64 FNV-1a over the quantized weight's canonical bytes)
//! ```
//!
//! The canonical byte encoding of a quantized weight is `out_features`
//! (u32 LE), `in_features` (u32 LE), then each f64 entry in row-major
//! order as little-endian bytes. The base-model digest folds every
//! layer's name, shape, weight, and bias the same way (see
//! `ModelSpec::weight_digest`).

use std::fs;
use std::path::Path;

use crate::balance::{ChannelMask, StatKind};
use crate::calib::ActivationAccumulator;
use crate::codec::{Hif4Format, QuantAxis, QuantDescriptor};
use crate::digest::{fnv1a64, Fnv64};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const STATE_MAGIC: &[u8; 4] = b"TAQ4";
pub const CALIB_MAGIC: &[u8; 4] = b"TAQC";
pub const CALIB_RECORD_KIND: &[u8; 5] = b"CALIB";
pub const FORMAT_VERSION: u32 = 1;

/// Activation statistic selector echoed in the state header.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StatChoice {
    Max,
    Percentile,
}

impl StatChoice {
    pub fn as_u8(self) -> u8 {
        match self {
            StatChoice::Max => 0,
            StatChoice::Percentile => 1,
        }
    }

    pub fn from_u8(v: u8) -> Result<Self> {
        match v {
            0 => Ok(StatChoice::Max),
            1 => Ok(StatChoice::Percentile),
            other => Err(Error::FileFormat(format!("unknown stat enum {other}"))),
        }
    }
}

/// Per-layer quantization state: the mask plus the per-output-channel
/// weight scales and the checksum of the quantized weight they produce.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerQuantState {
    pub layer_name: String,
    pub in_features: u32,
    pub out_features: u32,
    pub mask: ChannelMask,
    pub weight_scales: Vec<f64>,
    pub checksum: u64,
}

impl LayerQuantState {
    /// Descriptor for re-quantizing the balanced weight with the stored
    /// scales.
    pub fn weight_descriptor(&self, format: Hif4Format) -> Result<QuantDescriptor> {
        QuantDescriptor::new(
            QuantAxis::PerOutputChannel,
            format,
            self.weight_scales.clone(),
        )
    }
}

/// The compact PTQ state: header config echo plus sorted layer records.
#[derive(Debug, Clone, PartialEq)]
pub struct PtqState {
    pub version: u32,
    pub base_model_digest: u64,
    pub percentile_p: f64,
    pub alpha: f64,
    pub epsilon: f64,
    pub stat_choice: StatChoice,
    pub exponent_bits: u8,
    pub mantissa_bits: u8,
    pub seed: u64,
    pub records: Vec<LayerQuantState>,
}

impl PtqState {
    /// The statistic the masks were built from.
    pub fn stat_kind(&self) -> StatKind {
        match self.stat_choice {
            StatChoice::Max => StatKind::Max,
            StatChoice::Percentile => StatKind::Percentile(self.percentile_p),
        }
    }

    pub fn format(&self) -> Result<Hif4Format> {
        Hif4Format::new(u32::from(self.exponent_bits), u32::from(self.mantissa_bits))
    }

    pub fn record(&self, layer_name: &str) -> Option<&LayerQuantState> {
        self.records
            .binary_search_by(|r| r.layer_name.as_str().cmp(layer_name))
            .ok()
            .map(|i| &self.records[i])
    }

    /// Records must be strictly sorted by layer name.
    pub fn validate(&self) -> Result<()> {
        for w in self.records.windows(2) {
            if w[0].layer_name >= w[1].layer_name {
                return Err(Error::State(format!(
                    "records not strictly sorted: `{}` then `{}`",
                    w[0].layer_name, w[1].layer_name
                )));
            }
        }
        Ok(())
    }

    /// Serialize to the fixed little-endian layout documented above.
    pub fn serialize(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(STATE_MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&self.base_model_digest.to_le_bytes());
        out.extend_from_slice(&self.percentile_p.to_le_bytes());
        out.extend_from_slice(&self.alpha.to_le_bytes());
        out.extend_from_slice(&self.epsilon.to_le_bytes());
        out.push(self.stat_choice.as_u8());
        out.push(self.exponent_bits);
        out.push(self.mantissa_bits);
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&(self.records.len() as u32).to_le_bytes());
        for r in &self.records {
            out.extend_from_slice(&(r.layer_name.len() as u32).to_le_bytes());
            out.extend_from_slice(r.layer_name.as_bytes());
            out.extend_from_slice(&r.in_features.to_le_bytes());
            out.extend_from_slice(&r.out_features.to_le_bytes());
            for v in r.mask.mask() {
                out.extend_from_slice(&v.to_le_bytes());
            }
            for v in &r.weight_scales {
                out.extend_from_slice(&v.to_le_bytes());
            }
            out.push((self.exponent_bits << 4) | self.mantissa_bits);
            out.push(0); // rounding: nearest, ties to even code index
            out.push(self.stat_choice.as_u8());
            out.extend_from_slice(&r.checksum.to_le_bytes());
        }
        let digest = fnv1a64(&out);
        out.extend_from_slice(&digest.to_le_bytes());
        out
    }

    /// Exact inverse of [`PtqState::serialize`] on its image. Checks magic,
    /// version, and the whole-file digest before touching any record.
    pub fn deserialize(bytes: &[u8]) -> Result<Self> {
        check_envelope(bytes, STATE_MAGIC, CALIB_MAGIC, "a calibration checkpoint")?;
        let mut r = Reader::new(&bytes[..bytes.len() - 8]);
        r.skip(4)?; // magic
        let version = r.u32()?;
        let base_model_digest = r.u64()?;
        let percentile_p = r.f64()?;
        let alpha = r.f64()?;
        let epsilon = r.f64()?;
        let stat_choice = StatChoice::from_u8(r.u8()?)?;
        let exponent_bits = r.u8()?;
        let mantissa_bits = r.u8()?;
        let seed = r.u64()?;
        for (name, v) in [
            ("percentile_p", percentile_p),
            ("alpha", alpha),
            ("epsilon", epsilon),
        ] {
            if !v.is_finite() {
                return Err(Error::FileFormat(format!("non-finite {name} in header")));
            }
        }
        let count = r.u32()? as usize;
        let mut records = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name_bytes = r.bytes(name_len)?;
            let layer_name = String::from_utf8(name_bytes.to_vec())
                .map_err(|_| Error::FileFormat("record name is not UTF-8".into()))?;
            let in_features = r.u32()?;
            let out_features = r.u32()?;
            let mask_entries = r.f64_vec(in_features as usize)?;
            let weight_scales = r.f64_vec(out_features as usize)?;
            let fmt = r.u8()?;
            let rounding = r.u8()?;
            let stat = r.u8()?;
            let checksum = r.u64()?;
            if fmt != (exponent_bits << 4) | mantissa_bits {
                return Err(Error::FileFormat(format!(
                    "record `{layer_name}` format enum {fmt:#x} disagrees with header"
                )));
            }
            if rounding != 0 {
                return Err(Error::FileFormat(format!(
                    "record `{layer_name}` unknown rounding enum {rounding}"
                )));
            }
            if stat != stat_choice.as_u8() {
                return Err(Error::FileFormat(format!(
                    "record `{layer_name}` stat enum {stat} disagrees with header"
                )));
            }
            let stat_kind = match stat_choice {
                StatChoice::Max => StatKind::Max,
                StatChoice::Percentile => StatKind::Percentile(percentile_p),
            };
            let mask = ChannelMask::from_parts(mask_entries, alpha, epsilon, stat_kind)
                .map_err(|e| Error::FileFormat(format!("record `{layer_name}`: {e}")))?;
            if let Some(bad) = weight_scales.iter().find(|s| !(**s > 0.0) || !s.is_finite()) {
                return Err(Error::FileFormat(format!(
                    "record `{layer_name}` weight scale {bad} not positive finite"
                )));
            }
            records.push(LayerQuantState {
                layer_name,
                in_features,
                out_features,
                mask,
                weight_scales,
                checksum,
            });
        }
        r.finish()?;
        let state = PtqState {
            version,
            base_model_digest,
            percentile_p,
            alpha,
            epsilon,
            stat_choice,
            exponent_bits,
            mantissa_bits,
            seed,
            records,
        };
        state
            .validate()
            .map_err(|e| Error::FileFormat(e.to_string()))?;
        Ok(state)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.serialize())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::deserialize(&fs::read(path)?)
    }
}

/// Calibration checkpoint: every quantize-partition accumulator, sorted by
/// layer name, tied to the base model digest.
#[derive(Debug, Clone)]
pub struct CalibCheckpoint {
    pub version: u32,
    pub base_model_digest: u64,
    pub seed: u64,
    pub accumulators: Vec<ActivationAccumulator>,
}

impl CalibCheckpoint {
    pub fn serialize(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CALIB_MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&self.base_model_digest.to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&(self.accumulators.len() as u32).to_le_bytes());
        for acc in &self.accumulators {
            out.extend_from_slice(CALIB_RECORD_KIND);
            out.extend_from_slice(&(acc.layer_name().len() as u32).to_le_bytes());
            out.extend_from_slice(acc.layer_name().as_bytes());
            out.extend_from_slice(&(acc.num_channels() as u32).to_le_bytes());
            match acc.cap() {
                Some(c) => {
                    out.push(1);
                    out.extend_from_slice(&(c as u64).to_le_bytes());
                }
                None => {
                    out.push(0);
                    out.extend_from_slice(&0u64.to_le_bytes());
                }
            }
            out.extend_from_slice(&acc.rng_word_pos().to_le_bytes());
            for i in 0..acc.num_channels() {
                out.extend_from_slice(&acc.observed_count()[i].to_le_bytes());
                let samples = acc.channel_samples(i);
                out.extend_from_slice(&(samples.len() as u32).to_le_bytes());
                for v in samples {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        let digest = fnv1a64(&out);
        out.extend_from_slice(&digest.to_le_bytes());
        out
    }

    pub fn deserialize(bytes: &[u8]) -> Result<Self> {
        check_envelope(bytes, CALIB_MAGIC, STATE_MAGIC, "a PTQ state file")?;
        let mut r = Reader::new(&bytes[..bytes.len() - 8]);
        r.skip(4)?;
        let version = r.u32()?;
        let base_model_digest = r.u64()?;
        let seed = r.u64()?;
        let count = r.u32()? as usize;
        let mut accumulators = Vec::with_capacity(count);
        for _ in 0..count {
            let kind = r.bytes(CALIB_RECORD_KIND.len())?;
            if kind != CALIB_RECORD_KIND {
                return Err(Error::FileFormat(format!(
                    "unexpected record kind {kind:?}, wanted CALIB"
                )));
            }
            let name_len = r.u32()? as usize;
            let name = String::from_utf8(r.bytes(name_len)?.to_vec())
                .map_err(|_| Error::FileFormat("record name is not UTF-8".into()))?;
            let num_channels = r.u32()? as usize;
            let cap_flag = r.u8()?;
            let cap_raw = r.u64()?;
            let cap = match cap_flag {
                0 => None,
                1 => Some(cap_raw as usize),
                other => {
                    return Err(Error::FileFormat(format!("bad cap flag {other}")));
                }
            };
            let word_pos = u128::from_le_bytes(
                r.bytes(16)?
                    .try_into()
                    .expect("16-byte slice"),
            );
            let mut observed = Vec::with_capacity(num_channels);
            let mut samples = Vec::with_capacity(num_channels);
            for _ in 0..num_channels {
                observed.push(r.u64()?);
                let n = r.u32()? as usize;
                samples.push(r.f64_vec(n)?);
            }
            accumulators.push(
                ActivationAccumulator::from_parts(
                    name, num_channels, samples, observed, cap, seed, word_pos,
                )
                .map_err(|e| Error::FileFormat(e.to_string()))?,
            );
        }
        r.finish()?;
        Ok(CalibCheckpoint {
            version,
            base_model_digest,
            seed,
            accumulators,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.serialize())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::deserialize(&fs::read(path)?)
    }
}

/// Canonical checksum of a quantized weight tensor.
pub fn quantized_weight_checksum(q: &Tensor) -> Result<u64> {
    let (o, k) = q.dims2()?;
    let mut h = Fnv64::new();
    h.update_u32(o as u32);
    h.update_u32(k as u32);
    for &v in q.data() {
        h.update_f64(v);
    }
    Ok(h.finish())
}

/// Magic, version, and trailing-digest validation shared by both readers.
fn check_envelope(
    bytes: &[u8],
    magic: &[u8; 4],
    other_magic: &[u8; 4],
    other_desc: &str,
) -> Result<()> {
    if bytes.len() < 4 {
        return Err(Error::Corruption(format!(
            "file truncated at {} bytes",
            bytes.len()
        )));
    }
    if &bytes[..4] != magic {
        if &bytes[..4] == other_magic {
            return Err(Error::FileFormat(format!(
                "file is {other_desc} (magic {})",
                String::from_utf8_lossy(other_magic)
            )));
        }
        return Err(Error::FileFormat(format!(
            "bad magic {:?}, expected {}",
            &bytes[..4],
            String::from_utf8_lossy(magic)
        )));
    }
    if bytes.len() < 16 {
        return Err(Error::Corruption(format!(
            "file truncated at {} bytes",
            bytes.len()
        )));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::Version(version));
    }
    let stored = u64::from_le_bytes(
        bytes[bytes.len() - 8..]
            .try_into()
            .expect("8-byte trailer"),
    );
    let computed = fnv1a64(&bytes[..bytes.len() - 8]);
    if stored != computed {
        return Err(Error::Corruption(format!(
            "file digest mismatch (stored {stored:#018x}, computed {computed:#018x})"
        )));
    }
    Ok(())
}

/// Bounds-checked little-endian reader.
struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn bytes(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Corruption(format!(
                "record data overruns file at offset {}",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn skip(&mut self, n: usize) -> Result<()> {
        self.bytes(n).map(|_| ())
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().expect("4")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(8)?.try_into().expect("8")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes(8)?.try_into().expect("8")))
    }

    fn f64_vec(&mut self, n: usize) -> Result<Vec<f64>> {
        let mut v = Vec::with_capacity(n);
        for _ in 0..n {
            v.push(self.f64()?);
        }
        Ok(v)
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Corruption(format!(
                "{} trailing bytes after last record",
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_state() -> PtqState {
        let mask = ChannelMask::from_parts(
            vec![0.5, 2.0, 1.25, 0.0625],
            0.5,
            1e-8,
            StatKind::Percentile(99.9),
        )
        .unwrap();
        PtqState {
            version: FORMAT_VERSION,
            base_model_digest: 0xdead_beef_cafe_f00d,
            percentile_p: 99.9,
            alpha: 0.5,
            epsilon: 1e-8,
            stat_choice: StatChoice::Percentile,
            exponent_bits: 2,
            mantissa_bits: 1,
            seed: 42,
            records: vec![LayerQuantState {
                layer_name: "x".into(),
                in_features: 4,
                out_features: 3,
                mask,
                weight_scales: vec![0.25, 1.0, 7.5],
                checksum: 0x0123_4567_89ab_cdef,
            }],
        }
    }

    fn empty_state() -> PtqState {
        PtqState {
            records: Vec::new(),
            ..sample_state()
        }
    }

    #[test]
    fn empty_state_has_fixed_size() {
        // header 55 bytes + trailing digest 8.
        assert_eq!(empty_state().serialize().len(), 63);
    }

    #[test]
    fn one_layer_size_closed_form() {
        // record: 4 + name(1) + 4 + 4 + 8*4 + 8*3 + 3 + 8 = 80.
        assert_eq!(sample_state().serialize().len(), 63 + 80);
    }

    #[test]
    fn serialize_is_deterministic() {
        let s = sample_state();
        assert_eq!(s.serialize(), s.serialize());
    }

    #[test]
    fn round_trip_field_for_field() {
        let s = sample_state();
        let back = PtqState::deserialize(&s.serialize()).unwrap();
        assert_eq!(back, s);
        // serialize . deserialize . serialize is byte-stable.
        assert_eq!(back.serialize(), s.serialize());
    }

    #[test]
    fn first_byte_flip_is_loud() {
        let mut bytes = sample_state().serialize();
        bytes[0] ^= 0xff;
        match PtqState::deserialize(&bytes) {
            Err(Error::FileFormat(_)) | Err(Error::Corruption(_)) => {}
            other => panic!("expected loud failure, got {other:?}"),
        }
    }

    #[test]
    fn truncation_is_corruption() {
        let bytes = sample_state().serialize();
        for cut in [0, 3, 10, 40, bytes.len() - 9, bytes.len() - 1] {
            match PtqState::deserialize(&bytes[..cut]) {
                Err(Error::Corruption(_)) => {}
                other => panic!("cut at {cut}: expected corruption, got {other:?}"),
            }
        }
    }

    #[test]
    fn every_single_bit_flip_is_detected() {
        let bytes = sample_state().serialize();
        // All flips in a stride keep runtime small while covering header,
        // record body, and trailer regions.
        for pos in (0..bytes.len()).step_by(7) {
            for bit in 0..8 {
                let mut m = bytes.clone();
                m[pos] ^= 1 << bit;
                assert!(
                    PtqState::deserialize(&m).is_err(),
                    "flip at {pos}:{bit} was accepted"
                );
            }
        }
    }

    #[test]
    fn unsupported_version_is_a_version_error() {
        let mut s = sample_state();
        s.version = 2;
        let bytes = s.serialize();
        assert!(matches!(
            PtqState::deserialize(&bytes),
            Err(Error::Version(2))
        ));
    }

    #[test]
    fn unsorted_records_rejected() {
        let mut s = sample_state();
        let mut r2 = s.records[0].clone();
        r2.layer_name = "a".into(); // sorts before "x"
        s.records.push(r2);
        let bytes = s.serialize();
        assert!(matches!(
            PtqState::deserialize(&bytes),
            Err(Error::FileFormat(_))
        ));
    }

    #[test]
    fn state_reader_rejects_calib_file() {
        let ck = CalibCheckpoint {
            version: FORMAT_VERSION,
            base_model_digest: 1,
            seed: 42,
            accumulators: vec![],
        };
        match PtqState::deserialize(&ck.serialize()) {
            Err(Error::FileFormat(msg)) => assert!(msg.contains("calibration")),
            other => panic!("got {other:?}"),
        }
    }

    #[test]
    fn calib_checkpoint_round_trip() {
        let mut acc = ActivationAccumulator::with_cap("blk.q", 2, Some(4), 42);
        for k in 0..9 {
            let b = Tensor::from_rows(1, 2, vec![k as f64, -2.0 * k as f64]).unwrap();
            acc.observe(&b).unwrap();
        }
        let ck = CalibCheckpoint {
            version: FORMAT_VERSION,
            base_model_digest: 77,
            seed: 42,
            accumulators: vec![acc.clone()],
        };
        let back = CalibCheckpoint::deserialize(&ck.serialize()).unwrap();
        assert_eq!(back.base_model_digest, 77);
        assert_eq!(back.accumulators.len(), 1);
        let b = &back.accumulators[0];
        assert_eq!(b.layer_name(), acc.layer_name());
        assert_eq!(b.observed_count(), acc.observed_count());
        assert_eq!(b.channel_samples(0), acc.channel_samples(0));
        assert_eq!(b.channel_samples(1), acc.channel_samples(1));
        assert_eq!(b.cap(), acc.cap());
        assert_eq!(b.rng_word_pos(), acc.rng_word_pos());
        // byte-stable
        assert_eq!(back.serialize(), ck.serialize());
    }

    #[test]
    fn calib_reader_rejects_state_file() {
        let bytes = empty_state().serialize();
        match CalibCheckpoint::deserialize(&bytes) {
            Err(Error::FileFormat(msg)) => assert!(msg.contains("PTQ state")),
            other => panic!("got {other:?}"),
        }
    }

    #[test]
    fn checksum_canonical_encoding() {
        let t = Tensor::from_rows(2, 1, vec![1.0, -0.5]).unwrap();
        let c1 = quantized_weight_checksum(&t).unwrap();
        // Same data, different shape => different checksum.
        let t2 = Tensor::from_rows(1, 2, vec![1.0, -0.5]).unwrap();
        let c2 = quantized_weight_checksum(&t2).unwrap();
        assert_ne!(c1, c2);
        // Deterministic.
        assert_eq!(c1, quantized_weight_checksum(&t).unwrap());
    }
}

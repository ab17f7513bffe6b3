//! Single-file model checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "BFCK" | u32 version | u32 descriptor length | descriptor (UTF-8 lines key=value)
//! | u64 param count | params as f64
//! | u8 has optimizer | [u64 adam step | m as f64 | v as f64]
//! | u64 FNV-1a checksum of every byte after the version field
//! ```
//!
//! The descriptor embeds the network shape and the training metadata, so a
//! checkpoint is enough to rebuild the model without the original config.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{FieldModel, ModelKind};
use crate::net::{Mlp, NetSpec, ParamVector};
use crate::optim::AdamState;
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 4] = b"BFCK";
pub const VERSION: u32 = 1;

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Provenance of a checkpoint.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CheckpointMeta {
    pub dataset: String,
    pub seed: u64,
    /// Optimizer steps taken so far.
    pub step: u64,
    pub config_hash: u64,
    /// Free-form extra entries; keys must not contain `=` or newlines.
    pub extra: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub model: FieldModel<T>,
    pub optimizer: Option<AdamState<T>>,
    pub meta: CheckpointMeta,
}

impl<T: Scalar> Checkpoint<T> {
    /// Fails when the checkpoint was produced under a different config.
    pub fn check_config_hash(&self, expected: u64) -> Result<()> {
        if self.meta.config_hash != expected {
            return Err(Error::config(format!(
                "config hash mismatch: checkpoint has {:016x}, current config is {expected:016x}",
                self.meta.config_hash
            )));
        }
        Ok(())
    }

    fn descriptor(&self) -> Result<String> {
        let spec = self.model.net().spec();
        let hidden: Vec<String> = spec.hidden_dims.iter().map(|h| h.to_string()).collect();
        let mut d = String::new();
        let mut line = |k: &str, v: &str| -> Result<()> {
            if k.contains(['=', '\n']) || v.contains('\n') {
                return Err(Error::config(format!(
                    "descriptor entry `{k}` is not representable"
                )));
            }
            d.push_str(k);
            d.push('=');
            d.push_str(v);
            d.push('\n');
            Ok(())
        };
        line("kind", &self.model.kind().to_string())?;
        line("frame_dim", &self.model.frame_dim().to_string())?;
        line("input_dim", &spec.input_dim.to_string())?;
        line("hidden_dims", &hidden.join(","))?;
        line("output_dim", &spec.output_dim.to_string())?;
        line("activation", &spec.activation.to_string())?;
        line("coord_embedding", &spec.coord_embedding.to_string())?;
        line("dataset", &self.meta.dataset)?;
        line("seed", &self.meta.seed.to_string())?;
        line("step", &self.meta.step.to_string())?;
        line("config_hash", &format!("{:016x}", self.meta.config_hash))?;
        for (k, v) in &self.meta.extra {
            line(&format!("extra.{k}"), v)?;
        }
        Ok(d)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let desc = self.descriptor()?;
        let params = self.model.net().params().values();
        let mut out = Vec::with_capacity(32 + desc.len() + 8 * params.len() * 3);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(desc.len() as u32).to_le_bytes());
        out.extend_from_slice(desc.as_bytes());
        out.extend_from_slice(&(params.len() as u64).to_le_bytes());
        push_reals(&mut out, params);
        match &self.optimizer {
            None => out.push(0),
            Some(st) => {
                if st.m.len() != params.len() || st.v.len() != params.len() {
                    return Err(Error::config(
                        "optimizer state does not match parameter count",
                    ));
                }
                out.push(1);
                out.extend_from_slice(&st.step.to_le_bytes());
                push_reals(&mut out, &st.m);
                push_reals(&mut out, &st.v);
            }
        }
        let sum = fnv1a(&out[8..]);
        out.extend_from_slice(&sum.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4)?;
        if magic != MAGIC {
            return Err(Error::format(0, "bad magic, not a checkpoint"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::format(
                4,
                format!("unsupported checkpoint version {version} (this build reads {VERSION})"),
            ));
        }
        if bytes.len() < 16 {
            return Err(Error::format(bytes.len() as u64, "truncated checkpoint"));
        }
        let body_end = bytes.len() - 8;
        let stored = u64::from_le_bytes(bytes[body_end..].try_into().expect("8 bytes"));
        if fnv1a(&bytes[8..body_end]) != stored {
            return Err(Error::format(
                body_end as u64,
                "checksum mismatch, file is corrupt or truncated",
            ));
        }
        let r_bytes = &bytes[..body_end];
        let mut r = Reader {
            bytes: r_bytes,
            pos: 8,
        };
        let desc_len = r.u32()? as usize;
        let desc_at = r.pos as u64;
        let desc = std::str::from_utf8(r.take(desc_len)?)
            .map_err(|_| Error::format(desc_at, "descriptor is not UTF-8"))?;
        let fields = parse_descriptor(desc, desc_at)?;
        let get = |k: &str| {
            fields
                .get(k)
                .map(String::as_str)
                .ok_or_else(|| Error::format(desc_at, format!("descriptor lacks `{k}`")))
        };
        let num = |k: &str| -> Result<u64> {
            get(k)?
                .parse()
                .map_err(|_| Error::format(desc_at, format!("descriptor `{k}` is not a number")))
        };
        let kind: ModelKind = get("kind")?.parse()?;
        let hidden_dims = match get("hidden_dims")? {
            "" => Vec::new(),
            s => s
                .split(',')
                .map(|h| h.parse())
                .collect::<std::result::Result<Vec<usize>, _>>()
                .map_err(|_| Error::format(desc_at, "bad hidden_dims"))?,
        };
        let spec = NetSpec {
            input_dim: num("input_dim")? as usize,
            hidden_dims,
            output_dim: num("output_dim")? as usize,
            activation: get("activation")?.parse()?,
            coord_embedding: get("coord_embedding")?.parse()?,
        };
        let meta = CheckpointMeta {
            dataset: get("dataset")?.to_string(),
            seed: num("seed")?,
            step: num("step")?,
            config_hash: u64::from_str_radix(get("config_hash")?, 16)
                .map_err(|_| Error::format(desc_at, "bad config_hash"))?,
            extra: fields
                .iter()
                .filter_map(|(k, v)| k.strip_prefix("extra.").map(|k| (k.to_string(), v.clone())))
                .collect(),
        };
        let count_at = r.pos as u64;
        let count = r.u64()? as usize;
        if count != spec.param_count() {
            return Err(Error::format(
                count_at,
                format!(
                    "{count} parameters stored, network shape needs {}",
                    spec.param_count()
                ),
            ));
        }
        let values = r.reals::<T>(count)?;
        let params = ParamVector::new(values, spec.layout())?;
        let model = FieldModel::new(
            kind,
            num("frame_dim")? as usize,
            Mlp::from_params(spec, params)?,
        )?;
        let optimizer = match r.take(1)?[0] {
            0 => None,
            1 => {
                let step = r.u64()?;
                let m = r.reals::<T>(count)?;
                let v = r.reals::<T>(count)?;
                Some(AdamState { step, m, v })
            }
            other => {
                return Err(Error::format(
                    (r.pos - 1) as u64,
                    format!("bad optimizer flag {other}"),
                ))
            }
        };
        if r.pos != r_bytes.len() {
            return Err(Error::format(
                r.pos as u64,
                "trailing bytes before checksum",
            ));
        }
        Ok(Checkpoint {
            model,
            optimizer,
            meta,
        })
    }
}

fn push_reals<T: Scalar>(out: &mut Vec<u8>, xs: &[T]) {
    for x in xs {
        out.extend_from_slice(&x.to_f64_lossy().to_le_bytes());
    }
}

fn parse_descriptor(desc: &str, at: u64) -> Result<BTreeMap<String, String>> {
    desc.lines()
        .filter(|l| !l.is_empty())
        .map(|l| {
            l.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| Error::format(at, format!("descriptor line `{l}` has no `=`")))
        })
        .collect()
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(
                self.pos as u64,
                format!(
                    "truncated: need {n} bytes, {} left",
                    self.bytes.len() - self.pos
                ),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn reals<T: Scalar>(&mut self, n: usize) -> Result<Vec<T>> {
        let len = n
            .checked_mul(8)
            .ok_or_else(|| Error::format(self.pos as u64, "array length overflows"))?;
        let raw = self.take(len)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| T::of(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
            .collect())
    }
}

/// Writes atomically: a temporary sibling file is renamed over `path`.
pub fn save_checkpoint<T: Scalar>(path: &Path, ckpt: &Checkpoint<T>) -> Result<()> {
    let bytes = ckpt.to_bytes()?;
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<Checkpoint<T>> {
    Checkpoint::from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{Activation, CoordEmbedding};
    use ndarray::Array1;

    fn sample() -> Checkpoint<f64> {
        let model = FieldModel::init(
            ModelKind::BiFlow,
            4,
            vec![6, 5],
            Activation::Silu,
            CoordEmbedding::default(),
            3,
        )
        .unwrap();
        let n = model.net().params().len();
        let mut opt = AdamState::new(n);
        opt.step = 7;
        opt.m
            .iter_mut()
            .enumerate()
            .for_each(|(i, m)| *m = i as f64 * 0.01);
        opt.v
            .iter_mut()
            .enumerate()
            .for_each(|(i, v)| *v = i as f64 * 1e-4);
        let mut extra = BTreeMap::new();
        extra.insert("loss".to_string(), "biflow".to_string());
        Checkpoint {
            model,
            optimizer: Some(opt),
            meta: CheckpointMeta {
                dataset: "bounce".into(),
                seed: 11,
                step: 7,
                config_hash: 0xdead_beef_0123_4567,
                extra,
            },
        }
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let c = sample();
        let back = Checkpoint::<f64>::from_bytes(&c.to_bytes().unwrap()).unwrap();
        assert_eq!(back, c);
        let x = Array1::from_vec((0..4).map(|i| i as f64 * 0.3 - 0.5).collect());
        let a = c.model.branches(x.view(), 0.4, 0.1).unwrap();
        let b = back.model.branches(x.view(), 0.4, 0.1).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn without_optimizer() {
        let mut c = sample();
        c.optimizer = None;
        let back = Checkpoint::<f64>::from_bytes(&c.to_bytes().unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn every_single_byte_corruption_is_detected() {
        let bytes = sample().to_bytes().unwrap();
        for i in 0..bytes.len() {
            let mut b = bytes.clone();
            b[i] ^= 0x10;
            assert!(Checkpoint::<f64>::from_bytes(&b).is_err(), "byte {i}");
        }
    }

    #[test]
    fn future_version_rejected() {
        let mut bytes = sample().to_bytes().unwrap();
        bytes[4..8].copy_from_slice(&2u32.to_le_bytes());
        let err = Checkpoint::<f64>::from_bytes(&bytes).unwrap_err();
        assert!(
            err.to_string().contains("unsupported checkpoint version 2"),
            "{err}"
        );
    }

    #[test]
    fn truncation_rejected() {
        let bytes = sample().to_bytes().unwrap();
        for n in [0, 3, 8, 20, bytes.len() - 1] {
            assert!(matches!(
                Checkpoint::<f64>::from_bytes(&bytes[..n]),
                Err(Error::Format { .. })
            ));
        }
    }

    #[test]
    fn config_hash_check() {
        let c = sample();
        assert!(c.check_config_hash(0xdead_beef_0123_4567).is_ok());
        assert!(matches!(c.check_config_hash(1), Err(Error::Config(_))));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.bfck");
        let c = sample();
        save_checkpoint(&p, &c).unwrap();
        assert_eq!(load_checkpoint::<f64>(&p).unwrap(), c);
    }
}

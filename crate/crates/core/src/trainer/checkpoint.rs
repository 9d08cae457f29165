//! Text checkpoint: a header, the training config, then every parameter
//! tensor with values stored as IEEE-754 bit patterns in hex, so a reload
//! is bit-identical.

use std::fmt::Write as _;
use std::path::Path;

use crate::diffcore::Tensor;
use crate::encoders::{ModelDims, ModelParams};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::TrainConfig;

const MAGIC: &str = "dsea-checkpoint";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub params: ModelParams<T>,
    pub config: TrainConfig,
    /// Epoch the parameters were taken at (0 = initialization).
    pub epoch: usize,
    pub val_mrr: f64,
}

fn hex<T: Scalar>(v: T) -> String {
    format!("{:016x}", v.to_f64_lossy().to_bits())
}

impl<T: Scalar> Checkpoint<T> {
    pub fn to_text(&self) -> String {
        let d = &self.params.dims;
        let mut s = String::new();
        let _ = writeln!(s, "{MAGIC} {VERSION}");
        let _ = writeln!(s, "scalar {}", T::NAME);
        let _ = writeln!(s, "epoch {}", self.epoch);
        let _ = writeln!(s, "val_mrr {:016x}", self.val_mrr.to_bits());
        let _ = writeln!(
            s,
            "dims {} {} {} {} {} {} {}",
            d.entities[0], d.entities[1], d.relations[0], d.relations[1], d.d_e, d.d_r, d.layers
        );
        let _ = writeln!(s, "config");
        s.push_str(&self.config.to_config_string());
        let _ = writeln!(s, "end");
        for (name, t) in self.params.named() {
            let _ = writeln!(s, "tensor {name} {} {}", t.rows(), t.cols());
            for r in 0..t.rows() {
                let row: Vec<String> = t.row(r).iter().map(|&v| hex(v)).collect();
                let _ = writeln!(s, "{}", row.join(" "));
            }
        }
        s
    }

    pub fn from_text(text: &str, path: &Path) -> Result<Self> {
        let mut lines = text.lines().enumerate().peekable();
        let err = |line: usize, message: String| Error::Parse {
            path: path.to_owned(),
            line: line + 1,
            message,
        };
        let mut next = |want: &str| -> Result<(usize, Vec<String>)> {
            let (i, l) = lines
                .next()
                .ok_or_else(|| err(text.lines().count(), format!("missing `{want}`")))?;
            let fields: Vec<String> = l.split_whitespace().map(str::to_owned).collect();
            if !want.is_empty() && fields.first().map(String::as_str) != Some(want) {
                return Err(err(i, format!("expected `{want}`")));
            }
            Ok((i, fields))
        };
        let num = |i: usize, f: &str| -> Result<usize> {
            f.parse().map_err(|_| err(i, format!("bad integer `{f}`")))
        };
        let bits = |i: usize, f: &str| -> Result<f64> {
            u64::from_str_radix(f, 16)
                .map(f64::from_bits)
                .map_err(|_| err(i, format!("bad hex value `{f}`")))
        };

        let (i, h) = next(MAGIC)?;
        if h.get(1).map(String::as_str) != Some("1") {
            return Err(err(i, "unsupported checkpoint version".to_owned()));
        }
        let (i, f) = next("scalar")?;
        if f.get(1).map(String::as_str) != Some(T::NAME) {
            return Err(err(i, format!("checkpoint scalar is not {}", T::NAME)));
        }
        let (i, f) = next("epoch")?;
        let epoch = num(i, f.get(1).map_or("", String::as_str))?;
        let (i, f) = next("val_mrr")?;
        let val_mrr = bits(i, f.get(1).map_or("", String::as_str))?;
        let (i, f) = next("dims")?;
        if f.len() != 8 {
            return Err(err(i, "dims needs 7 integers".to_owned()));
        }
        let v: Vec<usize> = f[1..].iter().map(|x| num(i, x)).collect::<Result<_>>()?;
        let dims = ModelDims {
            entities: [v[0], v[1]],
            relations: [v[2], v[3]],
            d_e: v[4],
            d_r: v[5],
            layers: v[6],
        };
        next("config")?;
        let mut cfg_text = String::new();
        loop {
            let (_, f) = next("")?;
            if f.first().map(String::as_str) == Some("end") {
                break;
            }
            cfg_text.push_str(&f.join(" "));
            cfg_text.push('\n');
        }
        let config = TrainConfig::parse(&cfg_text)?;

        let mut params = ModelParams::<T>::init(dims, 0)?;
        for (name, t) in params.named_mut() {
            let (i, f) = next("tensor")?;
            if f.len() != 4 || f[1] != name {
                return Err(err(i, format!("expected tensor `{name}`")));
            }
            let (r, c) = (num(i, &f[2])?, num(i, &f[3])?);
            if (r, c) != t.shape() {
                return Err(err(i, format!("tensor `{name}` has shape {r}x{c}, expected {:?}", t.shape())));
            }
            let mut vals = Vec::with_capacity(r * c);
            for _ in 0..r {
                let (i, f) = next("")?;
                if f.len() != c {
                    return Err(err(i, format!("expected {c} values")));
                }
                for x in &f {
                    vals.push(T::of(bits(i, x)?));
                }
            }
            let trainable = t.requires_grad();
            *t = Tensor::from_vec(r, c, vals)?;
            t.set_requires_grad(trainable);
        }
        Ok(Self {
            params,
            config,
            epoch,
            val_mrr,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, path)
    }
}

//! Model persistence in the `PXSPIKE1` container format.
//!
//! A checkpoint is the magic line `PXSPIKE1`, a fixed-order text header
//! (architecture string, input shape, class count, spiking configuration,
//! training precision, parameter count), the line `end`, and then every
//! parameter tensor in layer order as little-endian 32-bit floats. Weights
//! are stored at 32-bit precision regardless of the precision they were
//! trained at; the header records the training precision for reproduction.

use std::fmt::Write as _;
use std::path::Path;

use crate::arch::Architecture;
use crate::autodiff::ModelParams;
use crate::error::{Error, Result};
use crate::snn::{IfConfig, ResetMode};
use crate::tensor::Tensor;

const MAGIC: &str = "PXSPIKE1";

/// A loaded or to-be-saved model snapshot.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub arch: Architecture,
    pub theta: f64,
    pub t_max: usize,
    pub reset: ResetMode,
    /// Scalar type used in training, `f32` or `f64`.
    pub precision: String,
    pub params: ModelParams<f32>,
}

/// Write `bytes` to `path` through a same-directory temporary file and an
/// atomic rename, so readers never observe a half-written file.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::Checkpoint(format!("{} has no file name", path.display())))?;
    let tmp_name = format!(".{}.tmp", file_name.to_string_lossy());
    let tmp = match dir {
        Some(d) => d.join(&tmp_name),
        None => std::path::PathBuf::from(&tmp_name),
    };
    std::fs::write(&tmp, bytes)
        .map_err(|e| Error::Checkpoint(format!("cannot write {}: {e}", tmp.display())))?;
    std::fs::rename(&tmp, path).map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        Error::Checkpoint(format!("cannot move {} into place: {e}", path.display()))
    })
}

impl Checkpoint {
    /// Spiking configuration recorded in the header.
    pub fn if_config(&self) -> Result<IfConfig> {
        IfConfig::new(self.theta, self.t_max, self.reset)
    }

    /// Serialize and atomically write the checkpoint.
    pub fn save(&self, path: &Path) -> Result<()> {
        if self.precision != "f32" && self.precision != "f64" {
            return Err(Error::Checkpoint(format!("unknown precision {:?}", self.precision)));
        }
        self.params.check_shapes(&self.arch)?;
        let [c, h, w] = self.arch.input;
        let mut out = String::new();
        let _ = writeln!(out, "{MAGIC}");
        let _ = writeln!(out, "arch {}", self.arch);
        let _ = writeln!(out, "input {c},{h},{w}");
        let _ = writeln!(out, "classes {}", self.arch.classes);
        let _ = writeln!(out, "theta {}", self.theta);
        let _ = writeln!(out, "t {}", self.t_max);
        let _ = writeln!(out, "reset {}", self.reset);
        let _ = writeln!(out, "precision {}", self.precision);
        let _ = writeln!(out, "param_count {}", self.params.scalar_count());
        let _ = writeln!(out, "end");
        let mut bytes = out.into_bytes();
        bytes.reserve(4 * self.params.scalar_count());
        for i in 0..self.params.len() {
            for &v in self.params.value(i).as_slice() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        atomic_write(path, &bytes)
    }

    /// Read and strictly validate a checkpoint file.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)
            .map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
        let bad = |reason: String| Error::Checkpoint(format!("{}: {reason}", path.display()));

        let mut pos = 0usize;
        let line = |pos: &mut usize| -> Result<&str> {
            let rest = &bytes[*pos..];
            let nl = rest
                .iter()
                .position(|&b| b == b'\n')
                .ok_or_else(|| bad("header ends before the `end` line".into()))?;
            *pos += nl + 1;
            std::str::from_utf8(&rest[..nl]).map_err(|_| bad("header is not UTF-8 text".into()))
        };

        if line(&mut pos)? != MAGIC {
            return Err(bad(format!("missing {MAGIC} magic")));
        }
        let field = |pos: &mut usize, key: &str| -> Result<String> {
            let l = line(pos)?;
            match l.split_once(' ') {
                Some((k, v)) if k == key => Ok(v.to_string()),
                _ => Err(bad(format!("expected header line `{key} ...`, found {l:?}"))),
            }
        };

        let arch_text = field(&mut pos, "arch")?;
        let input_text = field(&mut pos, "input")?;
        let classes: usize = field(&mut pos, "classes")?
            .parse()
            .map_err(|_| bad("classes is not a number".into()))?;
        let theta: f64 = field(&mut pos, "theta")?
            .parse()
            .map_err(|_| bad("theta is not a number".into()))?;
        let t_max: usize = field(&mut pos, "t")?
            .parse()
            .map_err(|_| bad("t is not a number".into()))?;
        let reset: ResetMode = field(&mut pos, "reset")?
            .parse()
            .map_err(|_| bad("reset must be to_zero or subtract".into()))?;
        let precision = field(&mut pos, "precision")?;
        if precision != "f32" && precision != "f64" {
            return Err(bad(format!("unknown precision {precision:?}")));
        }
        let param_count: usize = field(&mut pos, "param_count")?
            .parse()
            .map_err(|_| bad("param_count is not a number".into()))?;
        if line(&mut pos)? != "end" {
            return Err(bad("header does not finish with `end`".into()));
        }

        let input: Vec<usize> = input_text
            .split(',')
            .map(|s| s.parse().map_err(|_| bad(format!("bad input shape {input_text:?}"))))
            .collect::<Result<_>>()?;
        let input: [usize; 3] = input
            .try_into()
            .map_err(|_| bad(format!("input shape {input_text:?} is not c,h,w")))?;

        let arch = Architecture::from_text(&arch_text, input, classes)?;
        if param_count != arch.param_count() {
            return Err(bad(format!(
                "header claims {param_count} parameters but architecture {arch_text} has {}",
                arch.param_count()
            )));
        }
        let payload = &bytes[pos..];
        if payload.len() != 4 * param_count {
            return Err(bad(format!(
                "expected {} payload bytes for {param_count} parameters, got {}",
                4 * param_count,
                payload.len()
            )));
        }

        let mut offset = 0usize;
        let mut tensors = Vec::with_capacity(arch.param_shapes.len());
        for shape in &arch.param_shapes {
            let n = shape.iter().product::<usize>();
            let data = payload[offset..offset + 4 * n]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            offset += 4 * n;
            tensors.push(Tensor::new(shape.clone(), data)?);
        }
        let params = ModelParams::from_tensors(tensors);
        IfConfig::new(theta, t_max, reset)?;
        Ok(Checkpoint { arch, theta, t_max, reset, precision, params })
    }
}

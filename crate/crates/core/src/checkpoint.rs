//! Text checkpoints: a short header, then the student parameters and
//! optionally the teacher parameters, one value per line in `{:.16e}` form
//! (17 significant digits, enough to round-trip any `f64` exactly).
//!
//! ```text
//! meta-semi-checkpoint 1
//! layers 2 32 32 2
//! activation relu
//! params 1186
//! teacher 1
//! -1.2345678901234567e-1
//! ...
//! ```

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{Activation, MlpArch, ParamVector};

const MAGIC: &str = "meta-semi-checkpoint";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub arch: MlpArch,
    pub student: ParamVector,
    pub teacher: Option<ParamVector>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let sizes: Vec<String> = self
            .arch
            .layer_sizes()
            .iter()
            .map(|n| n.to_string())
            .collect();
        let _ = writeln!(s, "{MAGIC} {VERSION}");
        let _ = writeln!(s, "layers {}", sizes.join(" "));
        let _ = writeln!(s, "activation {}", self.arch.activation().name());
        let _ = writeln!(s, "params {}", self.student.len());
        let _ = writeln!(s, "teacher {}", u8::from(self.teacher.is_some()));
        for v in self
            .student
            .iter()
            .chain(self.teacher.iter().flat_map(|t| t.iter()))
        {
            let _ = writeln!(s, "{v:.16e}");
        }
        s
    }

    pub fn parse(text: &str) -> Result<Checkpoint> {
        let mut lines = text.lines();
        let mut header = |name: &str| -> Result<Vec<String>> {
            let line = lines
                .next()
                .ok_or_else(|| bad(format!("missing `{name}` line")))?;
            let mut parts = line.split_whitespace();
            if parts.next() != Some(name) {
                return Err(bad(format!("expected `{name}`, found `{line}`")));
            }
            Ok(parts.map(str::to_string).collect())
        };
        let version = header(MAGIC)?;
        if version != [VERSION.to_string()] {
            return Err(bad(format!("unsupported format version {version:?}")));
        }
        let sizes = header("layers")?
            .iter()
            .map(|s| {
                s.parse::<usize>()
                    .map_err(|_| bad(format!("bad layer size `{s}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        let act = header("activation")?;
        let act = act
            .first()
            .and_then(|a| Activation::parse(a))
            .ok_or_else(|| bad(format!("bad activation {act:?}")))?;
        let arch = MlpArch::new(sizes, act)?;
        let count: usize = header("params")?
            .first()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("bad parameter count"))?;
        if count != arch.num_params() {
            return Err(bad(format!(
                "header says {count} parameters, architecture has {}",
                arch.num_params()
            )));
        }
        let has_teacher = match header("teacher")?.first().map(String::as_str) {
            Some("0") => false,
            Some("1") => true,
            other => return Err(bad(format!("bad teacher flag {other:?}"))),
        };
        let values = lines
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                l.trim()
                    .parse::<f64>()
                    .map_err(|_| bad(format!("bad value `{l}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        let expected = count * if has_teacher { 2 } else { 1 };
        if values.len() != expected {
            return Err(bad(format!(
                "expected {expected} values, found {}",
                values.len()
            )));
        }
        let mut values = values;
        let teacher = has_teacher.then(|| ParamVector::from_vec(values.split_off(count)));
        Ok(Checkpoint {
            arch,
            student: ParamVector::from_vec(values),
            teacher,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::parse(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use proptest::prelude::*;

    fn ckpt(values: Vec<f64>, teacher: bool) -> Checkpoint {
        let arch = MlpArch::new(vec![2, 3, 2], Activation::Tanh).unwrap();
        assert_eq!(values.len(), arch.num_params());
        let student = ParamVector::from_vec(values);
        let teacher =
            teacher.then(|| ParamVector::from_vec(student.iter().map(|v| v * 0.5).collect()));
        Checkpoint {
            arch,
            student,
            teacher,
        }
    }

    #[test]
    fn extreme_values_round_trip_bitwise() {
        let mut vals = vec![
            0.0,
            -0.0,
            f64::MIN_POSITIVE,
            f64::MAX,
            f64::MIN,
            5e-324,
            1.0 / 3.0,
            std::f64::consts::PI,
            -1e-300,
        ];
        let mut rng = Rng::new(1);
        vals.extend((0..8).map(|_| rng.normal() * 1e6));
        let c = ckpt(vals, true);
        let back = Checkpoint::parse(&c.to_text()).unwrap();
        for (a, b) in c.student.iter().zip(back.student.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(back, c);
    }

    #[test]
    fn rejects_corrupt_files() {
        let c = ckpt(vec![1.0; 17], false);
        let text = c.to_text();
        assert!(Checkpoint::parse(&text.replace("teacher 0", "teacher 1")).is_err());
        assert!(Checkpoint::parse(&text.replace("params 17", "params 18")).is_err());
        assert!(Checkpoint::parse(&text.replace("checkpoint 1", "checkpoint 2")).is_err());
        assert!(Checkpoint::parse(&text.replacen("1.0000000000000000e0", "one", 1)).is_err());
        assert!(Checkpoint::parse("").is_err());
    }

    proptest! {
        #[test]
        fn finite_values_round_trip(bits in prop::collection::vec(any::<u64>(), 17), teacher in any::<bool>()) {
            let vals: Vec<f64> = bits
                .into_iter()
                .map(f64::from_bits)
                .map(|v| if v.is_finite() { v } else { 0.0 })
                .collect();
            let c = ckpt(vals, teacher);
            let back = Checkpoint::parse(&c.to_text()).unwrap();
            for (a, b) in c.student.iter().zip(back.student.iter()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
            prop_assert_eq!(back.teacher.is_some(), teacher);
        }
    }
}

//! Text checkpoints for model parameters and optimizer state.
//!
//! Format, version 1 (one item per line, values at 17 significant digits
//! so a round trip is bit-exact):
//!
//! ```text
//! vireid-checkpoint v1
//! input_dim 16
//! hidden_dims 64
//! embedding_dim 64
//! num_classes 16
//! activation relu
//! bn_momentum 1.0000000000000001e-1
//! bn_eps 1.0000000000000001e-5
//! tensor enc0.weight 1024
//! <1024 whitespace-separated values>
//! ...
//! running bn.running_mean 64      (absent when running stats are unset)
//! running bn.running_var 64
//! optim step 120                  (optional optimizer section)
//! optim_config <base_lr> <min_lr> <beta1> <beta2> <eps> <weight_decay>
//! moment m0 1024 / moment v0 1024 ...
//! end
//! ```
//!
//! `hidden_dims` lists widths separated by spaces; an empty list is written
//! as `hidden_dims -`.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Activation, ModelConfig, ModelParams, RunningStats};
use crate::optim::{AdamWConfig, OptimState};

const MAGIC: &str = "vireid-checkpoint v1";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub optim: Option<OptimState>,
}

fn write_values(out: &mut String, values: &[f64]) {
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push(if i % 8 == 0 { '\n' } else { ' ' });
        }
        let _ = write!(out, "{v:.16e}");
    }
    out.push('\n');
}

impl Checkpoint {
    pub fn to_text(&self) -> String {
        let p = &self.params;
        let c = &p.config;
        let mut out = String::new();
        let _ = writeln!(out, "{MAGIC}");
        let _ = writeln!(out, "input_dim {}", c.input_dim);
        if c.hidden_dims.is_empty() {
            let _ = writeln!(out, "hidden_dims -");
        } else {
            let dims: Vec<String> = c.hidden_dims.iter().map(|d| d.to_string()).collect();
            let _ = writeln!(out, "hidden_dims {}", dims.join(" "));
        }
        let _ = writeln!(out, "embedding_dim {}", c.embedding_dim);
        let _ = writeln!(out, "num_classes {}", c.num_classes);
        let _ = writeln!(out, "activation {}", c.activation);
        let _ = writeln!(out, "bn_momentum {:.16e}", c.bn_momentum);
        let _ = writeln!(out, "bn_eps {:.16e}", c.bn_eps);
        for (name, t) in p.tensor_names().iter().zip(p.tensors()) {
            let _ = writeln!(out, "tensor {name} {}", t.len());
            write_values(&mut out, t);
        }
        if let Some(r) = &p.running {
            let _ = writeln!(out, "running bn.running_mean {}", r.mean.len());
            write_values(&mut out, &r.mean);
            let _ = writeln!(out, "running bn.running_var {}", r.var.len());
            write_values(&mut out, &r.var);
        }
        if let Some(o) = &self.optim {
            let oc = &o.config;
            let _ = writeln!(out, "optim step {}", o.step);
            let _ = writeln!(
                out,
                "optim_config {:.16e} {:.16e} {:.16e} {:.16e} {:.16e} {:.16e}",
                oc.base_lr, oc.min_lr, oc.beta1, oc.beta2, oc.eps, oc.weight_decay
            );
            for (i, (m, v)) in o.first_moment.iter().zip(&o.second_moment).enumerate() {
                let _ = writeln!(out, "moment m{i} {}", m.len());
                write_values(&mut out, m);
                let _ = writeln!(out, "moment v{i} {}", v.len());
                write_values(&mut out, v);
            }
        }
        out.push_str("end\n");
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty());
        let (ln, first) = lines.next().ok_or_else(|| Error::parse(1, "empty checkpoint"))?;
        if first != MAGIC {
            return Err(Error::parse(ln, format!("expected `{MAGIC}`")));
        }

        let mut header = |key: &str| -> Result<(usize, String)> {
            let (ln, line) = lines
                .next()
                .ok_or_else(|| Error::parse(0, format!("missing `{key}`")))?;
            let rest = line
                .strip_prefix(key)
                .and_then(|r| r.strip_prefix(' '))
                .ok_or_else(|| Error::parse(ln, format!("expected `{key}`")))?;
            Ok((ln, rest.to_string()))
        };
        fn num<T: std::str::FromStr>(ln: usize, s: &str) -> Result<T> {
            s.parse().map_err(|_| Error::parse(ln, format!("bad number `{s}`")))
        }
        let (l, v) = header("input_dim")?;
        let input_dim = num(l, &v)?;
        let (l, v) = header("hidden_dims")?;
        let hidden_dims = if v == "-" {
            Vec::new()
        } else {
            v.split_whitespace().map(|t| num(l, t)).collect::<Result<Vec<usize>>>()?
        };
        let (l, v) = header("embedding_dim")?;
        let embedding_dim = num(l, &v)?;
        let (l, v) = header("num_classes")?;
        let num_classes = num(l, &v)?;
        let (l, v) = header("activation")?;
        let activation: Activation = v.parse().map_err(|e: Error| Error::parse(l, e.to_string()))?;
        let (l, v) = header("bn_momentum")?;
        let bn_momentum = num(l, &v)?;
        let (l, v) = header("bn_eps")?;
        let bn_eps = num(l, &v)?;
        let config = ModelConfig {
            input_dim,
            hidden_dims,
            embedding_dim,
            num_classes,
            activation,
            bn_momentum,
            bn_eps,
        };
        config.validate().map_err(|e| Error::parse(l, e.to_string()))?;

        // Remaining body: sections of `<kind> <name> <len>` followed by values.
        let mut sections: Vec<(usize, String, String, Vec<f64>)> = Vec::new();
        let mut optim_step = None;
        let mut optim_config = None;
        let mut pending: Option<(usize, String, String, usize, Vec<f64>)> = None;
        let mut saw_end = false;
        for (ln, line) in lines {
            if let Some((_, _, _, want, vals)) = &mut pending {
                for tok in line.split_whitespace() {
                    vals.push(num(ln, tok)?);
                }
                if vals.len() >= *want {
                    let (l0, kind, name, want, vals) = pending.take().expect("pending section");
                    if vals.len() != want {
                        return Err(Error::parse(ln, format!("{name}: expected {want} values, found {}", vals.len())));
                    }
                    sections.push((l0, kind, name, vals));
                }
                continue;
            }
            let toks: Vec<&str> = line.split_whitespace().collect();
            match toks.as_slice() {
                ["end"] => {
                    saw_end = true;
                    break;
                }
                ["optim", "step", s] => optim_step = Some(num::<u64>(ln, s)?),
                ["optim_config", rest @ ..] if rest.len() == 6 => {
                    let v = rest.iter().map(|t| num::<f64>(ln, t)).collect::<Result<Vec<_>>>()?;
                    optim_config = Some(AdamWConfig {
                        base_lr: v[0],
                        min_lr: v[1],
                        beta1: v[2],
                        beta2: v[3],
                        eps: v[4],
                        weight_decay: v[5],
                    });
                }
                [kind @ ("tensor" | "running" | "moment"), name, len] => {
                    let want = num::<usize>(ln, len)?;
                    if want == 0 {
                        sections.push((ln, kind.to_string(), name.to_string(), Vec::new()));
                    } else {
                        pending = Some((ln, kind.to_string(), name.to_string(), want, Vec::with_capacity(want)));
                    }
                }
                _ => return Err(Error::parse(ln, format!("unexpected line `{line}`"))),
            }
        }
        if let Some((ln, _, name, ..)) = pending {
            return Err(Error::parse(ln, format!("truncated section `{name}`")));
        }
        if !saw_end {
            return Err(Error::parse(0, "missing `end` marker"));
        }

        // Shape template from a zero-initialized model of the same config.
        let mut params = ModelParams::init(config, &mut crate::linalg::RngStream::new(0))?;
        params.running = None;
        let names = params.tensor_names();
        let mut running_mean = None;
        let mut running_var = None;
        let mut moments: Vec<(String, Vec<f64>)> = Vec::new();
        {
            let mut slots = params.tensors_mut();
            let mut filled = vec![false; slots.len()];
            for (ln, kind, name, vals) in sections {
                match kind.as_str() {
                    "tensor" => {
                        let idx = names
                            .iter()
                            .position(|n| *n == name)
                            .ok_or_else(|| Error::parse(ln, format!("unknown tensor `{name}`")))?;
                        if slots[idx].len() != vals.len() {
                            return Err(Error::parse(
                                ln,
                                format!("tensor {name}: expected {} values, found {}", slots[idx].len(), vals.len()),
                            ));
                        }
                        slots[idx].copy_from_slice(&vals);
                        filled[idx] = true;
                    }
                    "running" if name == "bn.running_mean" => running_mean = Some(vals),
                    "running" if name == "bn.running_var" => running_var = Some(vals),
                    "moment" => moments.push((name, vals)),
                    _ => return Err(Error::parse(ln, format!("unknown section `{kind} {name}`"))),
                }
            }
            if let Some(i) = filled.iter().position(|f| !f) {
                return Err(Error::parse(0, format!("missing tensor `{}`", names[i])));
            }
        }
        match (running_mean, running_var) {
            (Some(mean), Some(var)) => {
                let e = params.config.embedding_dim;
                if mean.len() != e || var.len() != e {
                    return Err(Error::parse(0, "running statistics have the wrong length"));
                }
                params.running = Some(RunningStats { mean, var });
            }
            (None, None) => {}
            _ => return Err(Error::parse(0, "running mean and variance must appear together")),
        }
        let optim = match (optim_step, optim_config) {
            (Some(step), Some(cfg)) => {
                let mut state = OptimState::for_params(cfg, &params);
                state.step = step;
                let n = state.first_moment.len();
                for (name, vals) in moments {
                    let (slot, idx) = match name.split_at(1) {
                        ("m", i) => (0, i),
                        ("v", i) => (1, i),
                        _ => return Err(Error::parse(0, format!("bad moment name `{name}`"))),
                    };
                    let i: usize = num(0, idx)?;
                    if i >= n {
                        return Err(Error::parse(0, format!("moment index {i} out of range")));
                    }
                    let target = if slot == 0 {
                        &mut state.first_moment[i]
                    } else {
                        &mut state.second_moment[i]
                    };
                    if target.len() != vals.len() {
                        return Err(Error::parse(0, format!("moment `{name}` has the wrong length")));
                    }
                    *target = vals;
                }
                Some(state)
            }
            (None, None) => None,
            _ => return Err(Error::parse(0, "incomplete optimizer section")),
        };
        Ok(Self { params, optim })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::RngStream;

    fn params(hidden: Vec<usize>) -> ModelParams {
        let mut cfg = ModelConfig::new(6, 4);
        cfg.hidden_dims = hidden;
        cfg.embedding_dim = 5;
        let mut p = ModelParams::init(cfg, &mut RngStream::new(31)).unwrap();
        p.running.as_mut().unwrap().mean[2] = 0.1 + 0.2;
        p
    }

    #[test]
    fn round_trip_is_bit_exact() {
        for hidden in [vec![], vec![7], vec![7, 3]] {
            let p = params(hidden);
            let mut o = OptimState::for_params(AdamWConfig::default(), &p);
            o.step = 17;
            o.first_moment[1][0] = std::f64::consts::PI;
            o.second_moment[0][3] = 1e-300;
            let ck = Checkpoint {
                params: p,
                optim: Some(o),
            };
            let back = Checkpoint::from_text(&ck.to_text()).unwrap();
            assert_eq!(back, ck);
        }
    }

    #[test]
    fn round_trip_without_optional_sections() {
        let mut p = params(vec![4]);
        p.running = None;
        let ck = Checkpoint { params: p, optim: None };
        assert_eq!(Checkpoint::from_text(&ck.to_text()).unwrap(), ck);
    }

    #[test]
    fn truncated_file_rejected() {
        let ck = Checkpoint {
            params: params(vec![4]),
            optim: None,
        };
        let text = ck.to_text();
        let cut = &text[..text.len() / 2];
        assert!(matches!(Checkpoint::from_text(cut), Err(Error::Parse { .. })));
        assert!(Checkpoint::from_text("not a checkpoint").is_err());
    }
}

//! Central finite differences, the gradient oracle for the reverse-mode tape.

use crate::error::Result;
use crate::mae::{MaeConfig, MaeModel};
use crate::params::{Bind, ParamTree, LN_EPS};
use crate::patcher;
use crate::rng::Rng;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::vit::{self, BlockParams, BlockShape, EncoderConfig, NormStyle};

/// Default step for 64-bit central differences.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Largest acceptable relative error between reverse-mode and finite-difference gradients.
pub const TOLERANCE: f64 = 1e-4;

/// (f(x + h·eᵢ) − f(x − h·eᵢ)) / 2h for every element i.
pub fn finite_diff_grad(mut f: impl FnMut(&Tensor<f64>) -> f64, x: &Tensor<f64>, h: f64) -> Tensor<f64> {
    let mut probe = x.clone();
    let mut out = Tensor::zeros(x.shape());
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let plus = f(&probe);
        probe.data_mut()[i] = orig - h;
        let minus = f(&probe);
        probe.data_mut()[i] = orig;
        out.data_mut()[i] = (plus - minus) / (2.0 * h);
    }
    out
}

/// Elementwise relative error |a − b| / (|a| + |b| + 1e-12).
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs() + 1e-12)
}

/// Outcome of one gradient check.
#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub max_rel_err: f64,
    /// Number of scalar inputs probed.
    pub probed: usize,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= TOLERANCE
    }
}

fn rand(shape: &[usize], rng: &mut Rng) -> Tensor<f64> {
    Tensor::randn(shape, 1.0, rng)
}

/// Reduces any output to a scalar with fixed random weights, so that every
/// output element contributes with a distinct coefficient.
fn weighted(t: &mut Tape<f64>, y: Var, seed: u64) -> Result<Var> {
    let w = rand(t.shape(y), &mut Rng::new(seed));
    let w = t.constant(&w);
    let p = t.mul(y, w)?;
    Ok(t.sum(p))
}

/// Compares the gradient of `f` with respect to each input in `xs` against
/// central differences.
pub fn check_inputs(
    name: &str,
    xs: &[Tensor<f64>],
    f: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
) -> Result<Check> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = xs.iter().map(|x| tape.leaf(&x.clone().with_grad())).collect();
    let y = f(&mut tape, &vars)?;
    tape.backward(y)?;
    let mut worst: f64 = 0.0;
    for (k, x) in xs.iter().enumerate() {
        let ad = match tape.grad(vars[k]) {
            Some(g) => Tensor::from_vec(x.shape(), g.to_vec())?,
            None => Tensor::zeros(x.shape()),
        };
        let mut failure = None;
        let fd = finite_diff_grad(
            |probe| {
                let mut t = Tape::new();
                let vs: Vec<Var> = xs
                    .iter()
                    .enumerate()
                    .map(|(j, x)| t.constant(if j == k { probe } else { x }))
                    .collect();
                match f(&mut t, &vs) {
                    Ok(y) => t.scalar(y),
                    Err(e) => {
                        failure = Some(e);
                        f64::NAN
                    }
                }
            },
            x,
            DEFAULT_STEP,
        );
        if let Some(e) = failure {
            return Err(e);
        }
        worst = worst.max(relative_error(&ad, &fd));
    }
    Ok(Check {
        name: name.to_string(),
        max_rel_err: worst,
        probed: xs.iter().map(Tensor::numel).sum(),
    })
}

/// Compares the gradient of `loss` with respect to every tensor of `params`
/// against central differences. `loss` must bind `params` on the tape it builds.
pub fn check_params<P: ParamTree<f64> + Clone>(
    name: &str,
    params: &P,
    loss: impl Fn(&P) -> Result<(Tape<f64>, Var)>,
) -> Result<Check> {
    let (mut tape, l) = loss(params)?;
    tape.backward(l)?;
    let grads = tape.param_grads();
    let mut worst: f64 = 0.0;
    let mut probed = 0;
    for (pname, t) in params.named_tensors("") {
        let ad = match grads.get(&pname) {
            Some(g) => Tensor::from_vec(t.shape(), g.clone())?,
            None => Tensor::zeros(t.shape()),
        };
        let mut failure = None;
        let fd = finite_diff_grad(
            |x| {
                let mut q = params.clone();
                q.visit_mut("", &mut |n, p| {
                    if n == pname {
                        p.data_mut().copy_from_slice(x.data())
                    }
                });
                match loss(&q) {
                    Ok((tape, l)) => tape.scalar(l),
                    Err(e) => {
                        failure = Some(e);
                        f64::NAN
                    }
                }
            },
            t,
            DEFAULT_STEP,
        );
        if let Some(e) = failure {
            return Err(e);
        }
        worst = worst.max(relative_error(&ad, &fd));
        probed += t.numel();
    }
    Ok(Check {
        name: name.to_string(),
        max_rel_err: worst,
        probed,
    })
}

/// Every differentiable tape op in isolation.
pub fn op_checks() -> Result<Vec<Check>> {
    let mut rng = Rng::new(17);
    let x = rand(&[3, 4], &mut rng);
    let x2 = rand(&[3, 4], &mut rng);
    let w = rand(&[4, 2], &mut rng);
    let v4 = rand(&[4], &mut rng);
    let g4 = rand(&[4], &mut rng);
    let row = rand(&[1, 4], &mut rng);
    let wide = rand(&[3, 2], &mut rng);
    let mut out = vec![
        check_inputs("matmul", &[x.clone(), w.clone()], |t, v| {
            let y = t.matmul(v[0], v[1])?;
            weighted(t, y, 1)
        })?,
        check_inputs("matmul_nt", &[x.clone(), x2.clone()], |t, v| {
            let y = t.matmul_nt(v[0], v[1])?;
            weighted(t, y, 2)
        })?,
        check_inputs("transpose", std::slice::from_ref(&x), |t, v| {
            let y = t.transpose(v[0]);
            weighted(t, y, 3)
        })?,
        check_inputs("add", &[x.clone(), x2.clone()], |t, v| {
            let y = t.add(v[0], v[1])?;
            weighted(t, y, 4)
        })?,
        check_inputs("sub", &[x.clone(), x2.clone()], |t, v| {
            let y = t.sub(v[0], v[1])?;
            weighted(t, y, 5)
        })?,
        check_inputs("mul", &[x.clone(), x2.clone()], |t, v| {
            let y = t.mul(v[0], v[1])?;
            weighted(t, y, 6)
        })?,
        check_inputs("add_row_bias", &[x.clone(), v4.clone()], |t, v| {
            let y = t.add_row_bias(v[0], v[1])?;
            weighted(t, y, 7)
        })?,
        check_inputs("scale", std::slice::from_ref(&x), |t, v| {
            let y = t.scale(v[0], -1.7);
            weighted(t, y, 8)
        })?,
        check_inputs("softmax_rows", std::slice::from_ref(&x), |t, v| {
            let y = t.softmax_rows(v[0]);
            weighted(t, y, 9)
        })?,
        check_inputs("layer_norm", &[x.clone(), g4.clone(), v4.clone()], |t, v| {
            let y = t.layer_norm(v[0], v[1], v[2], LN_EPS)?;
            weighted(t, y, 10)
        })?,
        check_inputs("gelu", std::slice::from_ref(&x), |t, v| {
            let y = t.gelu(v[0]);
            weighted(t, y, 11)
        })?,
        check_inputs("sum", std::slice::from_ref(&x), |t, v| {
            let y = t.mul(v[0], v[0])?;
            Ok(t.sum(y))
        })?,
        check_inputs("mean", std::slice::from_ref(&x), |t, v| {
            let y = t.mul(v[0], v[0])?;
            Ok(t.mean(y))
        })?,
        check_inputs("mean_rows", std::slice::from_ref(&x), |t, v| {
            let y = t.mean_rows(v[0]);
            weighted(t, y, 12)
        })?,
        check_inputs("gather_rows", std::slice::from_ref(&x), |t, v| {
            let y = t.gather_rows(v[0], &[2, 0, 2, 1])?;
            weighted(t, y, 13)
        })?,
        check_inputs("concat_rows", &[x.clone(), row.clone()], |t, v| {
            let y = t.concat_rows(&[v[0], v[1]])?;
            weighted(t, y, 14)
        })?,
        check_inputs("slice_cols", std::slice::from_ref(&x), |t, v| {
            let y = t.slice_cols(v[0], 1, 2)?;
            weighted(t, y, 15)
        })?,
        check_inputs("concat_cols", &[x.clone(), wide.clone()], |t, v| {
            let y = t.concat_cols(&[v[0], v[1]])?;
            weighted(t, y, 16)
        })?,
        check_inputs("repeat_row", std::slice::from_ref(&row), |t, v| {
            let y = t.repeat_row(v[0], 3)?;
            weighted(t, y, 17)
        })?,
        check_inputs("reshape", std::slice::from_ref(&x), |t, v| {
            let y = t.reshape(v[0], &[2, 6])?;
            weighted(t, y, 18)
        })?,
        check_inputs("softmax_cross_entropy", std::slice::from_ref(&x), |t, v| {
            t.softmax_cross_entropy(v[0], &[1, 3, 0])
        })?,
    ];
    out.sort_by(|a, b| a.name.cmp(&b.name));
    Ok(out)
}

/// One full transformer block (attention and FFN sublayers), with respect to
/// its input and every parameter, for both residual arrangements.
pub fn block_checks() -> Result<Vec<Check>> {
    let mut out = Vec::new();
    for norm_style in [NormStyle::Post, NormStyle::Pre] {
        let mut rng = Rng::new(23);
        let block = BlockParams::<f64>::new(8, 2, &mut rng);
        let x = rand(&[5, 8], &mut rng);
        let shape = BlockShape { heads: 2, norm_style };
        let run = |b: &BlockParams<f64>, t: &mut Tape<f64>, xv: Var| -> Result<Var> {
            let vars = b.bind(t, "");
            let y = vit::attention_block(t, xv, &vars, shape)?;
            let y = vit::ffn_block(t, y, &vars, shape)?;
            weighted(t, y, 31)
        };
        let tag = format!("{norm_style:?}").to_lowercase();
        out.push(check_params(&format!("vit_block[{tag}].params"), &block, |b| {
            let mut t = Tape::new();
            let xv = t.constant(&x);
            let l = run(b, &mut t, xv)?;
            Ok((t, l))
        })?);
        out.push(check_inputs(&format!("vit_block[{tag}].input"), std::slice::from_ref(&x), |t, v| {
            run(&block, t, v[0])
        })?);
    }
    Ok(out)
}

/// End-to-end masked reconstruction loss of a 16×16 image with 4×4 patches,
/// one encoder and one decoder block of width 8.
pub fn mae_check() -> Result<Check> {
    let cfg = MaeConfig {
        encoder: EncoderConfig {
            depth: 1,
            width: 8,
            heads: 2,
            ..EncoderConfig::desk()
        },
        decoder_depth: 1,
        decoder_width: 8,
        decoder_heads: 2,
        patch_size: 4,
        image_side: 16,
        ..MaeConfig::desk()
    };
    let mut rng = Rng::new(29);
    let model = MaeModel::<f64>::new(cfg, &mut rng)?;
    let img = Tensor::rand_uniform(&[16, 16, 1], 0.0, 1.0, &mut rng);
    let ps = model.patchify(&img)?;
    let plan = patcher::random_mask(ps.len(), model.cfg.mask_ratio, &mut rng)?;
    check_params("mae_loss", &model.params, |p| {
        let m = MaeModel {
            cfg: model.cfg.clone(),
            params: p.clone(),
        };
        let mut tape = Tape::new();
        let vars = m.bind(&mut tape);
        let l = m.loss_with_plan(&mut tape, &vars, &ps, &plan)?;
        Ok((tape, l))
    })
}

/// The whole finite-difference suite: every op, full blocks and the MAE loss.
pub fn suite() -> Result<Vec<Check>> {
    let mut all = op_checks()?;
    all.extend(block_checks()?);
    all.push(mae_check()?);
    Ok(all)
}

/// Maximum elementwise relative error between two same-shaped tensors.
pub fn relative_error(ad: &Tensor<f64>, fd: &Tensor<f64>) -> f64 {
    assert_eq!(ad.shape(), fd.shape());
    ad.data()
        .iter()
        .zip(fd.data())
        .map(|(&a, &b)| rel_err(a, b))
        .fold(0.0, f64::max)
}

//! The training objectives.
//!
//! `trainA = ext + int` drives the network weights and
//! `trainB = ext + int + λ_arch·arch + λ_comp·comp` drives the architecture
//! logits. Every term is built on a [`Tape`] so the same code produces values
//! and gradients; the plain-tensor functions wrap it with constant leaves.

use serde::{Deserialize, Serialize};

use crate::arch::{ArchParams, ArchVars};
use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::metrics::ssim_var;
use crate::supernet::ComplexityTable;
use crate::tensor::Tensor;

/// Probabilities are clamped to `[ε, 1 - ε]` before taking logarithms.
pub const LOG_CLAMP: f64 = 1e-7;

/// Per-batch values of every loss term.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub ext: f64,
    pub int: f64,
    pub arch: f64,
    pub comp: f64,
    #[serde(rename = "trainA")]
    pub train_a: f64,
    #[serde(rename = "trainB")]
    pub train_b: f64,
}

impl LossReport {
    pub const CSV_HEADER: &'static str = "step,ext,int,arch,comp,trainA,trainB";

    /// One CSV line without the trailing newline. Values use Rust's shortest
    /// round-trip formatting, so logs compare exactly.
    pub fn csv_row(&self, step: usize) -> String {
        format!(
            "{step},{},{},{},{},{},{}",
            self.ext, self.int, self.arch, self.comp, self.train_a, self.train_b
        )
    }

    pub fn is_finite(&self) -> bool {
        [self.ext, self.int, self.arch, self.comp, self.train_a, self.train_b].iter().all(|v| v.is_finite())
    }

    /// Name of the first non-finite component, checked in CSV order.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        [
            ("ext", self.ext),
            ("int", self.int),
            ("arch", self.arch),
            ("comp", self.comp),
            ("trainA", self.train_a),
            ("trainB", self.train_b),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(n, _)| n)
    }

    /// Component-wise mean of several reports.
    pub fn mean(reports: &[LossReport]) -> LossReport {
        let n = reports.len().max(1) as f64;
        let mut m = LossReport::default();
        for r in reports {
            m.ext += r.ext / n;
            m.int += r.int / n;
            m.arch += r.arch / n;
            m.comp += r.comp / n;
            m.train_a += r.train_a / n;
            m.train_b += r.train_b / n;
        }
        m
    }
}

fn check_outputs(tape: &Tape, outputs: &[Var], min: usize) -> Result<()> {
    if outputs.len() < min {
        return Err(if outputs.is_empty() {
            Error::EmptyBatch
        } else {
            Error::Length { what: "outputs for the internal loss".into(), expected: min, found: outputs.len() }
        });
    }
    let d = tape.dims(outputs[0]);
    if let Some(o) = outputs.iter().find(|&&o| tape.dims(o) != d) {
        return Err(Error::Shape(format!("outputs differ in shape: {:?} vs {:?}", d, tape.dims(*o))));
    }
    Ok(())
}

/// `(1/N) Σ MSE(O_i, G) + (1/N) Σ (1 - SSIM(O_i, G))`.
pub fn external_loss_var(tape: &mut Tape, outputs: &[Var], gt: Var) -> Result<Var> {
    check_outputs(tape, outputs, 1)?;
    if tape.dims(outputs[0]) != tape.dims(gt) {
        return Err(Error::Shape(format!(
            "output {:?} does not match ground truth {:?}",
            tape.dims(outputs[0]),
            tape.dims(gt)
        )));
    }
    let n = outputs.len() as f64;
    let mut terms = Vec::with_capacity(outputs.len());
    for &o in outputs {
        let m = tape.mse(o, gt);
        let s = ssim_var(tape, o, gt)?;
        let d = tape.sub(m, s);
        terms.push(d);
    }
    let total = tape.add_all(&terms);
    let total = tape.mul_const(total, 1.0 / n);
    Ok(tape.add_const(total, 1.0))
}

/// Mean pairwise MSE among the outputs; needs at least two.
pub fn internal_loss_var(tape: &mut Tape, outputs: &[Var]) -> Result<Var> {
    check_outputs(tape, outputs, 2)?;
    let mut terms = Vec::new();
    for i in 0..outputs.len() {
        for j in i + 1..outputs.len() {
            terms.push(tape.mse(outputs[i], outputs[j]));
        }
    }
    let k = terms.len() as f64;
    let s = tape.add_all(&terms);
    Ok(tape.mul_const(s, 1.0 / k))
}

fn entropy_sum(tape: &mut Tape, groups: &[Var]) -> (Var, usize) {
    let mut terms = Vec::with_capacity(groups.len());
    let mut count = 0;
    for &p in groups {
        count += tape.value(p).numel();
        let pc = tape.clamp(p, LOG_CLAMP, 1.0 - LOG_CLAMP);
        let lp = tape.ln(pc);
        let a = tape.mul(pc, lp);
        let neg = tape.mul_const(pc, -1.0);
        let q = tape.add_const(neg, 1.0);
        let lq = tape.ln(q);
        let b = tape.mul(q, lq);
        let ab = tape.add(a, b);
        terms.push(tape.sum(ab));
    }
    (tape.add_all(&terms), count)
}

/// Negative mean binary entropy of every `α` and every `β` scalar, each
/// family averaged over its own count.
pub fn arch_reg_var(tape: &mut Tape, arch: &ArchVars) -> Var {
    arch_reg_groups(tape, &arch.alpha_vectors(), &arch.beta_vectors())
}

/// [`arch_reg_var`] over explicit probability vectors; an empty family
/// contributes nothing.
pub fn arch_reg_groups(tape: &mut Tape, alphas: &[Var], betas: &[Var]) -> Var {
    let mut parts = Vec::new();
    for groups in [alphas, betas] {
        if groups.is_empty() {
            continue;
        }
        let (s, count) = entropy_sum(tape, groups);
        parts.push(tape.mul_const(s, -1.0 / count as f64));
    }
    if parts.is_empty() {
        return tape.constant(Tensor::scalar(0.0));
    }
    tape.add_all(&parts)
}

/// Expected parameter count in millions, `Σ α·Ω + Σ β·Λ`, over `U + V`.
pub fn complexity_var(tape: &mut Tape, arch: &ArchVars, table: &ComplexityTable) -> Result<Var> {
    complexity_groups(tape, &arch.alpha_vectors(), &arch.beta_vectors(), table)
}

/// [`complexity_var`] over explicit probability vectors.
pub fn complexity_groups(tape: &mut Tape, alphas: &[Var], betas: &[Var], table: &ComplexityTable) -> Result<Var> {
    if alphas.len() != table.columns.len() || betas.len() != table.sites.len() {
        return Err(Error::Length {
            what: "complexity table groups".into(),
            expected: alphas.len() + betas.len(),
            found: table.columns.len() + table.sites.len(),
        });
    }
    let mut terms = Vec::with_capacity(alphas.len() + betas.len());
    let mut count = 0;
    let rows = table.columns.iter().map(|r| r.to_vec()).chain(table.sites.iter().map(|r| r.to_vec()));
    for (&p, row) in alphas.iter().chain(betas).zip(rows) {
        count += row.len();
        let c = tape.constant(Tensor::from_vec(&[row.len()], row));
        let w = tape.mul(p, c);
        terms.push(tape.sum(w));
    }
    if terms.is_empty() {
        return Ok(tape.constant(Tensor::scalar(0.0)));
    }
    let s = tape.add_all(&terms);
    Ok(tape.mul_const(s, 1.0 / count as f64))
}

/// Architecture terms of the outer objective.
#[derive(Clone, Copy, Debug)]
pub struct ArchTerms<'a> {
    pub arch: &'a ArchVars,
    pub table: &'a ComplexityTable,
    pub lambda_arch: f64,
    pub lambda_comp: f64,
}

/// Every loss term of one multi-to-one batch on the tape.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub ext: Var,
    pub int: Option<Var>,
    pub arch: Option<Var>,
    pub comp: Option<Var>,
    pub train_a: Var,
    pub train_b: Var,
}

impl LossVars {
    pub fn report(&self, tape: &Tape) -> LossReport {
        let v = |x: Option<Var>| x.map_or(0.0, |x| tape.value(x).item());
        LossReport {
            ext: tape.value(self.ext).item(),
            int: v(self.int),
            arch: v(self.arch),
            comp: v(self.comp),
            train_a: tape.value(self.train_a).item(),
            train_b: tape.value(self.train_b).item(),
        }
    }
}

/// Build both objectives for the outputs of one pair. `internal == false`
/// drops the internal term (one-to-one training); `arch == None` makes
/// `trainB` equal to `trainA`.
pub fn objective(
    tape: &mut Tape,
    outputs: &[Var],
    gt: Var,
    internal: bool,
    arch: Option<ArchTerms<'_>>,
) -> Result<LossVars> {
    let ext = external_loss_var(tape, outputs, gt)?;
    let int = if internal { Some(internal_loss_var(tape, outputs)?) } else { None };
    let train_a = match int {
        Some(i) => tape.add(ext, i),
        None => ext,
    };
    let Some(at) = arch else {
        return Ok(LossVars { ext, int, arch: None, comp: None, train_a, train_b: train_a });
    };
    let reg = arch_reg_var(tape, at.arch);
    let comp = complexity_var(tape, at.arch, at.table)?;
    let r = tape.mul_const(reg, at.lambda_arch);
    let c = tape.mul_const(comp, at.lambda_comp);
    let train_b = tape.add_all(&[train_a, r, c]);
    Ok(LossVars { ext, int, arch: Some(reg), comp: Some(comp), train_a, train_b })
}

fn constants(tape: &mut Tape, xs: &[Tensor]) -> Vec<Var> {
    xs.iter().map(|x| tape.constant(x.clone())).collect()
}

pub fn external_loss(outputs: &[Tensor], gt: &Tensor) -> Result<f64> {
    let mut tape = Tape::new();
    let o = constants(&mut tape, outputs);
    let g = tape.constant(gt.clone());
    let l = external_loss_var(&mut tape, &o, g)?;
    Ok(tape.value(l).item())
}

pub fn internal_loss(outputs: &[Tensor]) -> Result<f64> {
    let mut tape = Tape::new();
    let o = constants(&mut tape, outputs);
    let l = internal_loss_var(&mut tape, &o)?;
    Ok(tape.value(l).item())
}

pub fn complexity_loss(arch: &ArchParams, table: &ComplexityTable) -> Result<f64> {
    let mut tape = Tape::new();
    let av = arch.bind(&mut tape, false);
    let l = complexity_var(&mut tape, &av, table)?;
    Ok(tape.value(l).item())
}

pub fn arch_reg_loss(arch: &ArchParams) -> f64 {
    let mut tape = Tape::new();
    let av = arch.bind(&mut tape, false);
    let l = arch_reg_var(&mut tape, &av);
    tape.value(l).item()
}

fn vectors(tape: &mut Tape, groups: &[&[f64]]) -> Vec<Var> {
    groups.iter().map(|g| tape.constant(Tensor::from_vec(&[g.len()], g.to_vec()))).collect()
}

/// [`arch_reg_loss`] on explicit `α` pairs and `β` vectors.
pub fn arch_reg_of(alphas: &[[f64; 2]], betas: &[[f64; 7]]) -> f64 {
    let mut tape = Tape::new();
    let a = vectors(&mut tape, &alphas.iter().map(|x| &x[..]).collect::<Vec<_>>());
    let b = vectors(&mut tape, &betas.iter().map(|x| &x[..]).collect::<Vec<_>>());
    let l = arch_reg_groups(&mut tape, &a, &b);
    tape.value(l).item()
}

/// [`complexity_loss`] on explicit `α` pairs and `β` vectors.
pub fn complexity_of(alphas: &[[f64; 2]], betas: &[[f64; 7]], table: &ComplexityTable) -> Result<f64> {
    let mut tape = Tape::new();
    let a = vectors(&mut tape, &alphas.iter().map(|x| &x[..]).collect::<Vec<_>>());
    let b = vectors(&mut tape, &betas.iter().map(|x| &x[..]).collect::<Vec<_>>());
    let l = complexity_groups(&mut tape, &a, &b, table)?;
    Ok(tape.value(l).item())
}

/// `ext + int`; the architecture columns of the report are zero.
pub fn train_a_loss(outputs: &[Tensor], gt: &Tensor) -> Result<LossReport> {
    let mut tape = Tape::new();
    let o = constants(&mut tape, outputs);
    let g = tape.constant(gt.clone());
    Ok(objective(&mut tape, &o, g, true, None)?.report(&tape))
}

pub fn train_b_loss(
    outputs: &[Tensor],
    gt: &Tensor,
    arch: &ArchParams,
    table: &ComplexityTable,
    lambda_arch: f64,
    lambda_comp: f64,
) -> Result<LossReport> {
    let mut tape = Tape::new();
    let o = constants(&mut tape, outputs);
    let g = tape.constant(gt.clone());
    let av = arch.bind(&mut tape, false);
    let terms = ArchTerms { arch: &av, table, lambda_arch, lambda_comp };
    Ok(objective(&mut tape, &o, g, true, Some(terms))?.report(&tape))
}

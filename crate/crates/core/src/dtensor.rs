//! Distinguished tensor fields on `J¹(T, M)`.
//!
//! A field is a *recipe*: besides evaluating its components at a jet, it can
//! re-express itself in the tilde chart of a [`ChangeMap`] (metrics are pulled
//! back, Lagrangians substituted, explicit expressions kept verbatim). The
//! tensoriality verdict compares that native recomputation against the
//! components predicted by the transformation law.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::exprlang::{parse, Expr, Var, VarKind};
use crate::geometry::Metric;
use crate::jetspace::{JetChange, JetPoint};
use crate::numdiff::ChangeMap;

/// Kind of one index slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SlotKind {
    UpperTemporal,
    LowerTemporal,
    UpperSpatial,
    LowerSpatial,
    /// `(i)/(α)`: upper spatial paired with lower temporal.
    UpperVertical,
    /// `(α)/(i)`: upper temporal paired with lower spatial.
    LowerVertical,
}

impl SlotKind {
    pub fn size(self, p: usize, n: usize) -> usize {
        match self {
            SlotKind::UpperTemporal | SlotKind::LowerTemporal => p,
            SlotKind::UpperSpatial | SlotKind::LowerSpatial => n,
            SlotKind::UpperVertical | SlotKind::LowerVertical => n * p,
        }
    }

    fn is_upper(self) -> bool {
        matches!(self, SlotKind::UpperTemporal | SlotKind::UpperSpatial | SlotKind::UpperVertical)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Slot {
    pub kind: SlotKind,
    labels: Vec<String>,
}

/// Ordered index slots, written e.g. `U(i,a);L(b);L(j)`.
///
/// Letters `a`–`h` (and Greek letters) are temporal, `i`–`z` spatial; a pair
/// of one spatial and one temporal label is a vertical slot.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Signature {
    slots: Vec<Slot>,
}

fn is_temporal_label(s: &str) -> Option<bool> {
    let c = s.chars().next()?;
    if !s.chars().all(|c| c.is_alphanumeric() || c == '_') {
        return None;
    }
    match c {
        'a'..='h' | 'A'..='H' => Some(true),
        'i'..='z' | 'I'..='Z' => Some(false),
        'α'..='ω' => Some(true),
        _ => None,
    }
}

impl FromStr for Signature {
    type Err = Error;

    fn from_str(src: &str) -> Result<Signature> {
        let bad = |msg: String| Error::Dimension(format!("signature `{src}`: {msg}"));
        let mut slots = Vec::new();
        for part in src.split(';').map(str::trim).filter(|s| !s.is_empty()) {
            let (head, rest) = part.split_at(1);
            let upper = match head {
                "U" | "u" => true,
                "L" | "l" => false,
                _ => return Err(bad(format!("slot `{part}` must start with U or L"))),
            };
            let inner = rest
                .trim()
                .strip_prefix('(')
                .and_then(|r| r.strip_suffix(')'))
                .ok_or_else(|| bad(format!("slot `{part}` must be written U(..) or L(..)")))?;
            let labels: Vec<String> = inner.split(',').map(|s| s.trim().to_string()).collect();
            let kinds: Vec<bool> = labels
                .iter()
                .map(|l| is_temporal_label(l).ok_or_else(|| bad(format!("bad index label `{l}`"))))
                .collect::<Result<_>>()?;
            let kind = match (kinds.as_slice(), upper) {
                ([true], true) => SlotKind::UpperTemporal,
                ([true], false) => SlotKind::LowerTemporal,
                ([false], true) => SlotKind::UpperSpatial,
                ([false], false) => SlotKind::LowerSpatial,
                ([a, b], up) if a != b => {
                    if up {
                        SlotKind::UpperVertical
                    } else {
                        SlotKind::LowerVertical
                    }
                }
                _ => {
                    return Err(bad(format!(
                        "slot `{part}` needs one index or a (spatial, temporal) pair"
                    )))
                }
            };
            slots.push(Slot { kind, labels });
        }
        Ok(Signature { slots })
    }
}

impl fmt::Display for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, s) in self.slots.iter().enumerate() {
            if k > 0 {
                f.write_str(";")?;
            }
            let ul = if s.kind.is_upper() { "U" } else { "L" };
            write!(f, "{ul}({})", s.labels.join(","))?;
        }
        Ok(())
    }
}

impl Serialize for Signature {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl Signature {
    pub fn parse(src: &str) -> Result<Signature> {
        src.parse()
    }

    pub fn scalar() -> Signature {
        Signature::default()
    }

    pub fn slots(&self) -> &[Slot] {
        &self.slots
    }

    pub fn kinds(&self) -> impl Iterator<Item = SlotKind> + '_ {
        self.slots.iter().map(|s| s.kind)
    }

    pub fn shape(&self, p: usize, n: usize) -> Vec<usize> {
        self.kinds().map(|k| k.size(p, n)).collect()
    }

    pub fn len(&self, p: usize, n: usize) -> usize {
        self.shape(p, n).iter().product()
    }

    pub fn is_scalar(&self) -> bool {
        self.slots.is_empty()
    }
}

/// Row-major component array; axis order is the slot order.
#[derive(Debug, Clone, PartialEq)]
pub struct Components {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Components {
    pub fn zeros(shape: Vec<usize>) -> Components {
        let len = shape.iter().product();
        Components {
            shape,
            data: vec![0.0; len],
        }
    }

    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Components> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::Dimension(format!(
                "{} values do not fill shape {shape:?}",
                data.len()
            )));
        }
        Ok(Components { shape, data })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    fn offset(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.shape.len());
        index
            .iter()
            .zip(&self.shape)
            .fold(0, |acc, (&i, &s)| acc * s + i)
    }

    pub fn get(&self, index: &[usize]) -> f64 {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], v: f64) {
        let o = self.offset(index);
        self.data[o] = v;
    }

    /// Multi-index of a flat offset.
    pub fn unravel(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.shape.len()];
        for (k, &s) in self.shape.iter().enumerate().rev() {
            idx[k] = flat % s;
            flat /= s;
        }
        idx
    }

    pub fn scale(&mut self, c: f64) {
        self.data.iter_mut().for_each(|v| *v *= c);
    }

    /// `self += c·other`.
    pub fn axpy(&mut self, c: f64, other: &Components) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Dimension(format!(
                "cannot combine shapes {:?} and {:?}",
                self.shape, other.shape
            )));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += c * b;
        }
        Ok(())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Worst `|predicted − native| / max(1, |native|)` and its flat offset.
    pub fn max_rel_err(predicted: &Components, native: &Components) -> (f64, usize) {
        if predicted.shape != native.shape {
            return (f64::INFINITY, 0);
        }
        let mut worst = (0.0, 0);
        for (k, (p, n)) in predicted.data.iter().zip(&native.data).enumerate() {
            let e = (p - n).abs() / n.abs().max(1.0);
            if e.is_nan() || e > worst.0 {
                worst = (if e.is_nan() { f64::INFINITY } else { e }, k);
            }
        }
        worst
    }

    /// Contracts axis `axis` with `m`: `out[.., r, ..] = Σ_s m[(r, s)] in[.., s, ..]`.
    pub fn contract_axis(&self, axis: usize, m: &DMatrix<f64>) -> Components {
        let size = self.shape[axis];
        debug_assert_eq!(m.ncols(), size);
        let inner: usize = self.shape[axis + 1..].iter().product();
        let outer: usize = self.shape[..axis].iter().product();
        let rows = m.nrows();
        let mut shape = self.shape.clone();
        shape[axis] = rows;
        let mut out = vec![0.0; outer * rows * inner];
        for o in 0..outer {
            for r in 0..rows {
                let dst = (o * rows + r) * inner;
                for s in 0..size {
                    let c = m[(r, s)];
                    if c == 0.0 {
                        continue;
                    }
                    let src = (o * size + s) * inner;
                    for k in 0..inner {
                        out[dst + k] += c * self.data[src + k];
                    }
                }
            }
        }
        Components { shape, data: out }
    }
}

/// A field on jets that knows how to re-express itself in another chart.
pub trait JetField: Send + Sync + fmt::Debug {
    fn name(&self) -> String;
    fn signature(&self) -> &Signature;
    /// `(p, n)` of the jet bundle the field lives on.
    fn dims(&self) -> (usize, usize);
    fn eval(&self, u: &JetPoint) -> Result<Components>;
    /// The same geometric recipe written in the tilde chart of `c`.
    fn in_chart(&self, c: &ChangeMap) -> Result<FieldRef>;
    /// Flattened component expressions, when the field is expression-backed.
    fn exprs(&self) -> Option<Vec<Expr>> {
        None
    }
}

pub type FieldRef = Arc<dyn JetField>;

pub(crate) fn check_jet(name: &str, dims: (usize, usize), u: &JetPoint) -> Result<()> {
    if (u.p(), u.n()) != dims {
        return Err(Error::Dimension(format!(
            "field `{name}` lives on (p, n) = {dims:?}, jet has ({}, {})",
            u.p(),
            u.n()
        )));
    }
    Ok(())
}

fn eval_exprs(exprs: &[Expr], shape: Vec<usize>, u: &JetPoint) -> Result<Components> {
    let env = u.env();
    let data = exprs.iter().map(|e| Ok(e.eval(&env)?)).collect::<Result<Vec<_>>>()?;
    Components::new(shape, data)
}

/// Per-slot transition matrix `out = T · in` for a chart change.
fn slot_matrix(kind: SlotKind, jc: &JetChange) -> DMatrix<f64> {
    let (p, n) = (jc.p(), jc.n());
    match kind {
        SlotKind::UpperTemporal => jc.k.clone(),
        SlotKind::LowerTemporal => jc.b.transpose(),
        SlotKind::UpperSpatial => jc.a.clone(),
        SlotKind::LowerSpatial => jc.a_inv.transpose(),
        SlotKind::UpperVertical => DMatrix::from_fn(n * p, n * p, |r, s| {
            let (j, beta, i, alpha) = (r / p, r % p, s / p, s % p);
            jc.a[(j, i)] * jc.b[(alpha, beta)]
        }),
        SlotKind::LowerVertical => DMatrix::from_fn(n * p, n * p, |r, s| {
            let (j, beta, i, alpha) = (r / p, r % p, s / p, s % p);
            jc.a_inv[(i, j)] * jc.k[(beta, alpha)]
        }),
    }
}

/// Tensorial transformation of component values, slot by slot.
pub fn transform_values(sig: &Signature, values: &Components, jc: &JetChange) -> Result<Components> {
    let shape = sig.shape(jc.p(), jc.n());
    if values.shape() != shape.as_slice() {
        return Err(Error::Dimension(format!(
            "components of shape {:?} do not match signature {sig} (shape {shape:?})",
            values.shape()
        )));
    }
    Ok(sig
        .kinds()
        .enumerate()
        .fold(values.clone(), |acc, (axis, kind)| acc.contract_axis(axis, &slot_matrix(kind, jc))))
}

/// Components `f` would have at the image of `u` if it were a d-tensor.
pub fn transform_components(f: &dyn JetField, c: &ChangeMap, u: &JetPoint) -> Result<Components> {
    let jc = JetChange::new(c, u)?;
    transform_values(f.signature(), &f.eval(u)?, &jc)
}

#[derive(Debug, Clone, Serialize)]
pub struct Witness {
    pub change: String,
    pub point: Option<JetPoint>,
    pub component: Vec<usize>,
    pub predicted: f64,
    pub native: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Outcome of a transformation-law check.
#[derive(Debug, Clone, Serialize)]
pub struct Verdict {
    pub pairs: usize,
    pub max_rel_err: f64,
    pub pass: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<Witness>,
}

impl Verdict {
    fn failed(change: &str, point: Option<&JetPoint>, err: Error) -> Verdict {
        Verdict {
            pairs: 0,
            max_rel_err: f64::INFINITY,
            pass: false,
            witness: Some(Witness {
                change: change.to_string(),
                point: point.cloned(),
                component: Vec::new(),
                predicted: f64::NAN,
                native: f64::NAN,
                error: Some(err.to_string()),
            }),
        }
    }

    pub fn merge(mut self, other: Verdict) -> Verdict {
        self.pairs += other.pairs;
        let worse = other.max_rel_err > self.max_rel_err
            || (self.witness.is_none() && other.witness.is_some() && other.max_rel_err >= self.max_rel_err);
        if worse {
            self.max_rel_err = other.max_rel_err;
            self.witness = other.witness;
        }
        self.pass &= other.pass;
        self
    }

    pub fn empty() -> Verdict {
        Verdict {
            pairs: 0,
            max_rel_err: 0.0,
            pass: true,
            witness: None,
        }
    }
}

/// Runs `pair` over every (change, jet) combination and reduces to a
/// verdict. `setup` is called once per change (e.g. to build the native
/// recipe in the tilde chart); `pair` returns `(predicted, native)`. Errors
/// become failing verdicts. Changes are processed in parallel, the reduction
/// is order-fixed.
pub fn check_pairs<T, S, P>(changes: &[ChangeMap], points: &[JetPoint], tol: f64, setup: S, pair: P) -> Verdict
where
    T: Send,
    S: Fn(&ChangeMap) -> Result<T> + Sync,
    P: Fn(&T, &JetChange) -> Result<(Components, Components)> + Sync,
{
    let per_change: Vec<Verdict> = changes
        .par_iter()
        .map(|c| {
            let ctx = match setup(c) {
                Ok(ctx) => ctx,
                Err(e) => return Verdict::failed(c.name(), points.first(), e),
            };
            let mut verdict = Verdict::empty();
            for u in points {
                let v = match JetChange::new(c, u).and_then(|jc| pair(&ctx, &jc)) {
                    Ok((predicted, native)) => {
                        let (err, at) = Components::max_rel_err(&predicted, &native);
                        let pass = err < tol;
                        Verdict {
                            pairs: 1,
                            max_rel_err: err,
                            pass,
                            witness: (!pass).then(|| Witness {
                                change: c.name().to_string(),
                                point: Some(u.clone()),
                                component: native.unravel(at),
                                predicted: predicted.data().get(at).copied().unwrap_or(f64::NAN),
                                native: native.data().get(at).copied().unwrap_or(f64::NAN),
                                error: None,
                            }),
                        }
                    }
                    Err(e) => Verdict::failed(c.name(), Some(u), e),
                };
                verdict = verdict.merge(v);
            }
            verdict
        })
        .collect();
    per_change.into_iter().fold(Verdict::empty(), Verdict::merge)
}

/// Compares `predict(values at u)` against the field recomputed natively in
/// each tilde chart.
pub fn check_law<P>(f: &dyn JetField, changes: &[ChangeMap], points: &[JetPoint], tol: f64, predict: P) -> Verdict
where
    P: Fn(&Components, &JetChange) -> Result<Components> + Sync,
{
    check_pairs(
        changes,
        points,
        tol,
        |c| f.in_chart(c),
        |native_field, jc| {
            let predicted = predict(&f.eval(&jc.source)?, jc)?;
            let native = native_field.eval(&jc.image)?;
            Ok((predicted, native))
        },
    )
}

/// Numeric d-tensor test (Def. of d-tensor field): pass iff the tensorial
/// prediction matches native recomputation to relative `tol` everywhere.
pub fn is_dtensor(f: &dyn JetField, changes: &[ChangeMap], points: &[JetPoint], tol: f64) -> Verdict {
    let sig = f.signature().clone();
    check_law(f, changes, points, tol, |vals, jc| transform_values(&sig, vals, jc))
}

// ---------------------------------------------------------------------------
// Concrete fields

/// Components given by explicit expressions over `t, x, x_α`, the same in
/// every chart. Tensorial only when the formula happens to be covariant.
#[derive(Debug, Clone)]
pub struct ExprField {
    name: String,
    signature: Signature,
    dims: (usize, usize),
    exprs: Vec<Expr>,
}

impl ExprField {
    pub fn new(name: impl Into<String>, signature: Signature, p: usize, n: usize, exprs: Vec<Expr>) -> Result<ExprField> {
        let name = name.into();
        let want = signature.len(p, n);
        if exprs.len() != want {
            return Err(Error::Dimension(format!(
                "field `{name}` with signature {signature} needs {want} components, got {}",
                exprs.len()
            )));
        }
        for e in &exprs {
            for kind in e.var_kinds() {
                let ok = match kind {
                    VarKind::Time(a) => a < p,
                    VarKind::Space(i) => i < n,
                    VarKind::Jet { space, time } => space < n && time < p,
                    VarKind::Other => false,
                };
                if !ok {
                    return Err(Error::Dimension(format!(
                        "component `{e}` of `{name}` uses a variable outside J¹ with (p, n) = ({p}, {n})"
                    )));
                }
            }
        }
        Ok(ExprField {
            name,
            signature,
            dims: (p, n),
            exprs,
        })
    }

    pub fn parse(name: impl Into<String>, signature: &str, p: usize, n: usize, sources: &[&str]) -> Result<ExprField> {
        let exprs = sources.iter().map(|s| Ok(parse(s)?)).collect::<Result<Vec<_>>>()?;
        ExprField::new(name, signature.parse()?, p, n, exprs)
    }
}

impl JetField for ExprField {
    fn name(&self) -> String {
        self.name.clone()
    }
    fn signature(&self) -> &Signature {
        &self.signature
    }
    fn dims(&self) -> (usize, usize) {
        self.dims
    }
    fn eval(&self, u: &JetPoint) -> Result<Components> {
        check_jet(&self.name, self.dims, u)?;
        eval_exprs(&self.exprs, self.signature.shape(u.p(), u.n()), u)
    }
    fn in_chart(&self, _: &ChangeMap) -> Result<FieldRef> {
        Ok(Arc::new(self.clone()))
    }
    fn exprs(&self) -> Option<Vec<Expr>> {
        Some(self.exprs.clone())
    }
}

#[derive(Debug, Clone)]
pub struct ZeroField {
    signature: Signature,
    dims: (usize, usize),
}

impl ZeroField {
    pub fn new(signature: Signature, p: usize, n: usize) -> ZeroField {
        ZeroField {
            signature,
            dims: (p, n),
        }
    }
}

impl JetField for ZeroField {
    fn name(&self) -> String {
        format!("zero[{}]", self.signature)
    }
    fn signature(&self) -> &Signature {
        &self.signature
    }
    fn dims(&self) -> (usize, usize) {
        self.dims
    }
    fn eval(&self, u: &JetPoint) -> Result<Components> {
        check_jet(&self.name(), self.dims, u)?;
        Ok(Components::zeros(self.signature.shape(u.p(), u.n())))
    }
    fn in_chart(&self, _: &ChangeMap) -> Result<FieldRef> {
        Ok(Arc::new(self.clone()))
    }
    fn exprs(&self) -> Option<Vec<Expr>> {
        let (p, n) = self.dims;
        Some(vec![Expr::zero(); self.signature.len(p, n)])
    }
}

/// `Σ c_k f_k` over fields of one signature.
#[derive(Debug, Clone)]
pub struct Combination {
    name: String,
    signature: Signature,
    dims: (usize, usize),
    terms: Vec<(f64, FieldRef)>,
}

impl Combination {
    pub fn new(name: impl Into<String>, terms: Vec<(f64, FieldRef)>) -> Result<Combination> {
        let name = name.into();
        let first = terms
            .first()
            .ok_or_else(|| Error::Dimension(format!("combination `{name}` has no terms")))?;
        let signature = first.1.signature().clone();
        let dims = first.1.dims();
        for (_, f) in &terms {
            if f.signature() != &signature || f.dims() != dims {
                return Err(Error::Dimension(format!(
                    "combination `{name}` mixes `{}` ({}) with `{}` ({signature})",
                    f.name(),
                    f.signature(),
                    first.1.name()
                )));
            }
        }
        Ok(Combination {
            name,
            signature,
            dims,
            terms,
        })
    }

    pub fn difference(a: FieldRef, b: FieldRef) -> Result<Combination> {
        Combination::new(format!("{} - {}", a.name(), b.name()), vec![(1.0, a), (-1.0, b)])
    }
}

impl JetField for Combination {
    fn name(&self) -> String {
        self.name.clone()
    }
    fn signature(&self) -> &Signature {
        &self.signature
    }
    fn dims(&self) -> (usize, usize) {
        self.dims
    }
    fn eval(&self, u: &JetPoint) -> Result<Components> {
        let mut out = Components::zeros(self.signature.shape(u.p(), u.n()));
        for (c, f) in &self.terms {
            out.axpy(*c, &f.eval(u)?)?;
        }
        Ok(out)
    }
    fn in_chart(&self, c: &ChangeMap) -> Result<FieldRef> {
        let terms = self
            .terms
            .iter()
            .map(|(k, f)| Ok((*k, f.in_chart(c)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Arc::new(Combination {
            terms,
            ..self.clone()
        }))
    }
    fn exprs(&self) -> Option<Vec<Expr>> {
        let mut acc: Option<Vec<Expr>> = None;
        for (c, f) in &self.terms {
            let es = f.exprs()?;
            acc = Some(match acc {
                None => es.into_iter().map(|e| *c * e).collect(),
                Some(prev) => prev.into_iter().zip(es).map(|(a, e)| a + *c * e).collect(),
            });
        }
        acc
    }
}

/// `C^{(i)}_{(α)} = x^i_α`, the canonical Liouville d-tensor.
#[derive(Debug, Clone)]
pub struct LiouvilleC {
    signature: Signature,
    dims: (usize, usize),
}

impl LiouvilleC {
    pub fn new(p: usize, n: usize) -> LiouvilleC {
        LiouvilleC {
            signature: "U(i,a)".parse().expect("static signature"),
            dims: (p, n),
        }
    }
}

impl JetField for LiouvilleC {
    fn name(&self) -> String {
        "liouville_c".into()
    }
    fn signature(&self) -> &Signature {
        &self.signature
    }
    fn dims(&self) -> (usize, usize) {
        self.dims
    }
    fn eval(&self, u: &JetPoint) -> Result<Components> {
        check_jet("liouville_c", self.dims, u)?;
        Ok(liouville_c(u))
    }
    fn in_chart(&self, _: &ChangeMap) -> Result<FieldRef> {
        Ok(Arc::new(self.clone()))
    }
    fn exprs(&self) -> Option<Vec<Expr>> {
        let (p, n) = self.dims;
        Some((0..n * p).map(|k| Expr::jet(k / p, k % p)).collect())
    }
}

pub fn liouville_c(u: &JetPoint) -> Components {
    Components {
        shape: vec![u.n() * u.p()],
        data: u.fused(),
    }
}

fn temporal_metric_at(h: &Metric, u: &JetPoint) -> Result<DMatrix<f64>> {
    if h.dim() != u.p() {
        return Err(Error::Dimension(format!(
            "temporal metric `{}` has dimension {}, jet has p = {}",
            h.name(),
            h.dim(),
            u.p()
        )));
    }
    h.eval(u.t())
}

/// `L^{(i)}_{(α)βγ} = h_{βγ} x^i_α`.
pub fn liouville_l(h: &Metric, u: &JetPoint) -> Result<Components> {
    let g = temporal_metric_at(h, u)?;
    let (p, n) = (u.p(), u.n());
    let mut out = Components::zeros(vec![n * p, p, p]);
    for i in 0..n {
        for a in 0..p {
            for b in 0..p {
                for c in 0..p {
                    out.set(&[i * p + a, b, c], g[(b, c)] * u.v()[(i, a)]);
                }
            }
        }
    }
    Ok(out)
}

/// `J^{(i)}_{(α)βj} = h_{αβ} δ^i_j`.
pub fn normalization_j(h: &Metric, u: &JetPoint) -> Result<Components> {
    let g = temporal_metric_at(h, u)?;
    let (p, n) = (u.p(), u.n());
    let mut out = Components::zeros(vec![n * p, p, n]);
    for i in 0..n {
        for a in 0..p {
            for b in 0..p {
                out.set(&[i * p + a, b, i], g[(a, b)]);
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy)]
enum TemporalMetricKind {
    Liouville,
    Normalization,
}

/// The `h`-dependent d-tensors [`liouville_l`] and [`normalization_j`] as
/// fields.
#[derive(Debug, Clone)]
pub struct TemporalMetricField {
    kind: TemporalMetricKind,
    h: Metric,
    n: usize,
    signature: Signature,
}

impl TemporalMetricField {
    pub fn liouville_l(h: Metric, n: usize) -> TemporalMetricField {
        TemporalMetricField {
            kind: TemporalMetricKind::Liouville,
            h,
            n,
            signature: "U(i,a);L(b);L(c)".parse().expect("static signature"),
        }
    }

    pub fn normalization_j(h: Metric, n: usize) -> TemporalMetricField {
        TemporalMetricField {
            kind: TemporalMetricKind::Normalization,
            h,
            n,
            signature: "U(i,a);L(b);L(j)".parse().expect("static signature"),
        }
    }
}

impl JetField for TemporalMetricField {
    fn name(&self) -> String {
        match self.kind {
            TemporalMetricKind::Liouville => format!("liouville_l[{}]", self.h.name()),
            TemporalMetricKind::Normalization => format!("normalization_j[{}]", self.h.name()),
        }
    }
    fn signature(&self) -> &Signature {
        &self.signature
    }
    fn dims(&self) -> (usize, usize) {
        (self.h.dim(), self.n)
    }
    fn eval(&self, u: &JetPoint) -> Result<Components> {
        check_jet(&self.name(), self.dims(), u)?;
        match self.kind {
            TemporalMetricKind::Liouville => liouville_l(&self.h, u),
            TemporalMetricKind::Normalization => normalization_j(&self.h, u),
        }
    }
    fn in_chart(&self, c: &ChangeMap) -> Result<FieldRef> {
        Ok(Arc::new(TemporalMetricField {
            h: self.h.pullback(c)?,
            ..self.clone()
        }))
    }
}

/// `G^{(α)(β)}_{(i)(j)} = ½ ∂²L / ∂x^i_α ∂x^j_β` for a Lagrangian over jet
/// variables, stored on the fused axes `(i·p+α, j·p+β)`.
#[derive(Debug, Clone)]
pub struct LagrangianMetric {
    lagrangian: Expr,
    dims: (usize, usize),
    hessian: Arc<Vec<Expr>>,
    signature: Signature,
}

impl LagrangianMetric {
    pub fn new(lagrangian: Expr, p: usize, n: usize) -> LagrangianMetric {
        let m = n * p;
        let first: Vec<Expr> = (0..m)
            .map(|k| lagrangian.diff(Var::jet(k / p, k % p).name()))
            .collect();
        let mut hessian = vec![Expr::zero(); m * m];
        for r in 0..m {
            for s in r..m {
                let e = 0.5 * first[r].diff(Var::jet(s / p, s % p).name());
                hessian[s * m + r] = e.clone();
                hessian[r * m + s] = e;
            }
        }
        LagrangianMetric {
            lagrangian,
            dims: (p, n),
            hessian: Arc::new(hessian),
            signature: "L(i,a);L(j,b)".parse().expect("static signature"),
        }
    }

    pub fn lagrangian(&self) -> &Expr {
        &self.lagrangian
    }
}

impl JetField for LagrangianMetric {
    fn name(&self) -> String {
        format!("hessian[{}]", self.lagrangian)
    }
    fn signature(&self) -> &Signature {
        &self.signature
    }
    fn dims(&self) -> (usize, usize) {
        self.dims
    }
    fn eval(&self, u: &JetPoint) -> Result<Components> {
        check_jet("lagrangian_metric", self.dims, u)?;
        eval_exprs(&self.hessian, self.signature.shape(u.p(), u.n()), u)
    }
    fn in_chart(&self, c: &ChangeMap) -> Result<FieldRef> {
        let (p, n) = self.dims;
        Ok(Arc::new(LagrangianMetric::new(pull_jet_expr(c, &self.lagrangian, p, n), p, n)))
    }
    fn exprs(&self) -> Option<Vec<Expr>> {
        Some(self.hessian.to_vec())
    }
}

/// Rewrites a function on `J¹` in the tilde chart: base variables through the
/// inverse map, and `x^i_α = (dx^i/dx~^j) x~^j_μ (dt~^μ/dt^α)`.
pub fn pull_jet_expr(c: &ChangeMap, e: &Expr, p: usize, n: usize) -> Expr {
    let a_inv = c.spatial_inv_exprs();
    let k: Vec<Vec<Expr>> = c
        .temporal_exprs()
        .iter()
        .map(|row| row.iter().map(|e| c.pull(e)).collect())
        .collect();
    let inv_t = c.inverse_t();
    let inv_x = c.inverse_x();
    e.substitute(&|v: &Var| match v.kind() {
        VarKind::Time(a) => inv_t.get(a).cloned(),
        VarKind::Space(i) => inv_x.get(i).cloned(),
        VarKind::Jet { space: i, time: alpha } if i < n && alpha < p => Some(Expr::sum((0..n).flat_map(|j| {
            let k = &k;
            (0..p).map(move |mu| &(&a_inv[i][j] * &Expr::jet(j, mu)) * &k[mu][alpha])
        }))),
        _ => None,
    })
}

pub fn lagrangian_metric(lagrangian: &Expr, u: &JetPoint) -> Result<Components> {
    LagrangianMetric::new(lagrangian.clone(), u.p(), u.n()).eval(u)
}

/// `L = h^{αβ}(t) φ_{ij}(x) x^i_α x^j_β`.
pub fn energy_lagrangian(h: &Metric, phi: &Metric) -> Expr {
    let hinv = h.inverse_exprs();
    let g = phi.components();
    let (p, n) = (h.dim(), phi.dim());
    Expr::sum((0..p).flat_map(|a| {
        (0..p).flat_map(move |b| {
            (0..n).flat_map(move |i| {
                (0..n).map(move |j| &(&(&hinv[a][b] * &g[i][j]) * &Expr::jet(i, a)) * &Expr::jet(j, b))
            })
        })
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::DomainBox;
    use crate::geometry::Factor;

    fn jet(t: &[f64], x: &[f64], rows: &[&[f64]]) -> JetPoint {
        JetPoint::from_rows(t.to_vec(), x.to_vec(), &rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn signature_parsing() {
        let s: Signature = "U(i,a);L(b);L(j)".parse().unwrap();
        assert_eq!(
            s.kinds().collect::<Vec<_>>(),
            vec![SlotKind::UpperVertical, SlotKind::LowerTemporal, SlotKind::LowerSpatial]
        );
        assert_eq!(s.to_string(), "U(i,a);L(b);L(j)");
        assert_eq!(s.shape(2, 3), vec![6, 2, 3]);
        assert!(Signature::parse("").unwrap().is_scalar());
        assert_eq!(Signature::parse("L(a, i)").unwrap().kinds().next(), Some(SlotKind::LowerVertical));
        assert_eq!(Signature::parse("U(α)").unwrap().kinds().next(), Some(SlotKind::UpperTemporal));
        for bad in ["X(i)", "U(i,j)", "U(a,b)", "U i", "U(1)", "U(i,a,b)"] {
            assert!(Signature::parse(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn contract_axis_matches_matrix_product() {
        let c = Components::new(vec![2, 3], (0..6).map(f64::from).collect()).unwrap();
        let m = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 2.0, 0.0, 1.0, 0.0, -1.0, 0.0, 1.0]);
        let out = c.contract_axis(1, &m);
        let want = DMatrix::from_row_slice(2, 3, c.data()) * m.transpose();
        for r in 0..2 {
            for s in 0..3 {
                assert_eq!(out.get(&[r, s]), want[(r, s)]);
            }
        }
        assert_eq!(c.unravel(4), vec![1, 1]);
    }

    #[test]
    fn identity_change_leaves_components() {
        let h = Metric::catalog("exp1d", Factor::Temporal, 1).unwrap();
        let f = TemporalMetricField::liouville_l(h, 2);
        let u = jet(&[0.4], &[0.1, 0.2], &[&[1.0], &[-2.0]]);
        let id = ChangeMap::identity(1, 2);
        assert_eq!(transform_components(&f, &id, &u).unwrap(), f.eval(&u).unwrap());
    }

    #[test]
    fn scalar_is_invariant() {
        let f = ExprField::parse("s", "", 1, 1, &["t1 + x1_1"]).unwrap();
        let u = jet(&[0.4], &[0.1], &[&[1.0]]);
        let c = ChangeMap::parse("double", &["2*t1"], &["x1"], &["t1/2"], &["x1"], DomainBox::unbounded(1, 1)).unwrap();
        assert_eq!(transform_components(&f, &c, &u).unwrap(), f.eval(&u).unwrap());
    }

    #[test]
    fn liouville_c_under_time_doubling() {
        let c = ChangeMap::parse("double", &["2*t1"], &["x1", "x2"], &["t1/2"], &["x1", "x2"], DomainBox::unbounded(1, 2)).unwrap();
        let u = jet(&[0.4], &[0.1, 0.2], &[&[3.0], &[-2.0]]);
        let out = transform_components(&LiouvilleC::new(1, 2), &c, &u).unwrap();
        assert_eq!(out.data(), &[1.5, -1.0]);
        assert!(is_dtensor(&LiouvilleC::new(1, 2), &[c], &[u], 1e-12).pass);
    }

    #[test]
    fn canonical_examples() {
        let u = jet(&[0.0, 0.0], &[0.0, 0.0], &[&[1.0, 2.0], &[3.0, 4.0]]);
        assert_eq!(liouville_c(&u).data(), &[1.0, 2.0, 3.0, 4.0]);
        let flat = Metric::catalog("euclidean:1", Factor::Temporal, 1).unwrap();
        let u1 = jet(&[0.2], &[0.5, -0.5], &[&[7.0], &[8.0]]);
        let l = liouville_l(&flat, &u1).unwrap();
        assert_eq!(l.data(), &[7.0, 8.0]);
        let flat2 = Metric::catalog("euclidean:1", Factor::Temporal, 1).unwrap();
        let j = normalization_j(&flat2, &u1).unwrap();
        assert_eq!(j.data(), &[1.0, 0.0, 0.0, 1.0]);
        let zero = jet(&[0.2], &[0.5, -0.5], &[&[0.0], &[0.0]]);
        assert_eq!(liouville_l(&flat, &zero).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn lagrangian_metric_examples() {
        let u = jet(&[0.1, 0.2], &[0.3, 0.4], &[&[1.0, 2.0], &[3.0, 4.0]]);
        let quad = parse("x1_1^2 + x1_2^2 + x2_1^2 + x2_2^2").unwrap();
        let g = lagrangian_metric(&quad, &u).unwrap();
        for r in 0..4 {
            for s in 0..4 {
                assert_eq!(g.get(&[r, s]), if r == s { 1.0 } else { 0.0 });
            }
        }
        let lin = parse("3*x1_1 - t1*x2_2 + x1").unwrap();
        assert_eq!(lagrangian_metric(&lin, &u).unwrap().max_abs(), 0.0);
        let mixed = parse("sin(x1_1*x2_2) + x1_2^3*x2_1").unwrap();
        let g = lagrangian_metric(&mixed, &u).unwrap();
        for r in 0..4 {
            for s in 0..4 {
                assert_eq!(g.get(&[r, s]), g.get(&[s, r]));
            }
        }
    }

    #[test]
    fn zero_field_and_mismatched_dims() {
        let z = ZeroField::new("U(i,a);L(b)".parse().unwrap(), 2, 1);
        let u = jet(&[0.1, 0.2], &[0.3], &[&[1.0, 2.0]]);
        let c = ChangeMap::parse("swap", &["t2", "t1"], &["x1"], &["t2", "t1"], &["x1"], DomainBox::unbounded(2, 1)).unwrap();
        assert!(is_dtensor(&z, &[c], std::slice::from_ref(&u), 1e-12).pass);
        let bad = jet(&[0.1], &[0.3], &[&[1.0]]);
        assert!(matches!(z.eval(&bad), Err(Error::Dimension(_))));
    }
}

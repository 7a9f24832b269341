//! Linear latent variable models.
//!
//! A model is held in reticular action form. The endogenous vector stacks
//! the latent responses of the manifest variables followed by the latent
//! variables, `e = (Y*, η)`, and satisfies
//!
//! ```text
//! e = a + B_i e + G x_i + u,   u ~ N(0, P)
//! ```
//!
//! where `B_i = B + Σ_s c_s v_is E_s` adds the random-slope terms moderated
//! by covariates. The implied distribution of `Y*` given `x_i` is the
//! manifest block of `N(A(a + G x_i), A P A')` with `A = (I - B_i)^-1`.

mod parse;

pub use parse::parse_model;

use crate::data::Dataset;
use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};
use std::collections::HashMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Continuous,
    Binary,
    Censored(Side),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Constraint {
    Free,
    Fixed(f64),
    Label(String),
}

/// Regression of `to` on `from`.
#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub to: String,
    pub from: String,
    pub constraint: Constraint,
}

/// Effect of `latent` on `outcome` moderated by `covariate`.
#[derive(Debug, Clone, PartialEq)]
pub struct SlopeTerm {
    pub outcome: String,
    pub latent: String,
    pub covariate: String,
    pub constraint: Constraint,
}

/// Residual covariance between two distinct endogenous variables.
#[derive(Debug, Clone, PartialEq)]
pub struct Covariance {
    pub a: String,
    pub b: String,
    pub constraint: Constraint,
}

/// A validated model. Intercepts and variances are listed for every
/// endogenous variable, manifest first, with identification defaults
/// already applied.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub manifest: Vec<String>,
    pub latent: Vec<String>,
    pub covariates: Vec<String>,
    pub kinds: Vec<Kind>,
    pub edges: Vec<Edge>,
    pub slopes: Vec<SlopeTerm>,
    pub intercepts: Vec<(String, Constraint)>,
    pub variances: Vec<(String, Constraint)>,
    pub covariances: Vec<Covariance>,
    pub fixed_labels: Vec<(String, f64)>,
}

impl ModelSpec {
    fn endogenous_index(&self, name: &str) -> Option<usize> {
        self.manifest
            .iter()
            .chain(self.latent.iter())
            .position(|n| n == name)
    }

    fn covariate_index(&self, name: &str) -> Option<usize> {
        self.covariates.iter().position(|n| n == name)
    }

    pub fn kind(&self, name: &str) -> Option<Kind> {
        self.manifest
            .iter()
            .position(|n| n == name)
            .map(|i| self.kinds[i])
    }

    /// Checks name resolution and that `I - B` is not singular for generic
    /// values of the free coefficients.
    fn check_structure(&self) -> Result<()> {
        let p = self.manifest.len();
        let m = p + self.latent.len();
        if self.kinds.len() != p {
            return Err(Error::Model("one kind per manifest variable required".into()));
        }
        if self.intercepts.len() != m || self.variances.len() != m {
            return Err(Error::Model(
                "one intercept and one variance per endogenous variable required".into(),
            ));
        }
        if let Some(n) = self.manifest.iter().find(|n| self.latent.contains(n)) {
            return Err(Error::Model(format!("'{n}' is both manifest and latent")));
        }
        let mut b = DMatrix::<f64>::zeros(m, m);
        for (e, edge) in self.edges.iter().enumerate() {
            let to = self.endogenous_index(&edge.to).ok_or_else(|| {
                Error::Model(format!("outcome '{}' is not a model variable", edge.to))
            })?;
            if edge.to == edge.from {
                return Err(Error::Model(format!("'{}' cannot depend on itself", edge.to)));
            }
            if let Some(from) = self.endogenous_index(&edge.from) {
                b[(to, from)] = match &edge.constraint {
                    Constraint::Fixed(v) => *v,
                    _ => 0.37 + 0.0917 * e as f64,
                };
            } else if self.covariate_index(&edge.from).is_none() {
                return Err(Error::Model(format!("unknown variable '{}'", edge.from)));
            }
        }
        for s in &self.slopes {
            if self.endogenous_index(&s.outcome).is_none()
                || !self.latent.contains(&s.latent)
                || self.covariate_index(&s.covariate).is_none()
            {
                return Err(Error::Model(format!(
                    "invalid slope term {} <- {} * {}",
                    s.outcome, s.latent, s.covariate
                )));
            }
        }
        for c in &self.covariances {
            if self.endogenous_index(&c.a).is_none() || self.endogenous_index(&c.b).is_none() {
                return Err(Error::Model(format!(
                    "covariance ({}, {}) involves a covariate",
                    c.a, c.b
                )));
            }
        }
        let ib = DMatrix::identity(m, m) - b;
        if m > 0 && ib.determinant().abs() < 1e-10 {
            return Err(Error::Model(
                "cyclic dependency makes (I - B) singular".into(),
            ));
        }
        Ok(())
    }
}

/// Printout groups, in display order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Group {
    Measurements,
    Regressions,
    RandomSlopes,
    Intercepts,
    ResidualVariances,
    ResidualCovariances,
}

impl Group {
    pub fn title(self) -> &'static str {
        match self {
            Group::Measurements => "Measurements",
            Group::Regressions => "Regressions",
            Group::RandomSlopes => "Random Slopes",
            Group::Intercepts => "Intercepts",
            Group::ResidualVariances => "Residual Variances",
            Group::ResidualCovariances => "Residual Covariances",
        }
    }
}

/// A cell of the structural matrices. Endogenous indices run over the
/// manifest variables followed by the latent ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cell {
    Intercept(usize),
    Path { to: usize, from: usize },
    Covariate { to: usize, covariate: usize },
    Slope { to: usize, from: usize, covariate: usize },
    Covariance(usize, usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    /// Unique name: `to<-from`, `to<-from*moderator`, the variable name for
    /// an intercept, `a~~b` for (co)variances, or the label.
    pub name: String,
    pub group: Group,
    /// Variances are optimized as logarithms.
    pub log_scale: bool,
    pub cells: Vec<Cell>,
}

impl Parameter {
    /// Name as shown under its group heading.
    pub fn display_name(&self) -> String {
        if self.group == Group::ResidualVariances {
            if let Some((a, b)) = self.name.split_once("~~") {
                if a == b {
                    return a.to_string();
                }
            }
        }
        self.name.clone()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Value {
    Fixed(f64),
    Free(usize),
}

/// Bijection between the free parameter vector and the structural cells.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterMap {
    spec: ModelSpec,
    params: Vec<Parameter>,
    entries: Vec<(Cell, Value)>,
}

/// Model-implied moments of the manifest latent responses for one covariate
/// pattern, with derivatives in the (internal) parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentSystem {
    pub xi: DVector<f64>,
    pub omega: DMatrix<f64>,
    /// `∂ξ/∂θ'`, p×d.
    pub dxi: DMatrix<f64>,
    /// `∂vecΩ/∂θ'`, p²×d with column-major vec.
    pub domega: DMatrix<f64>,
}

/// Structural matrices over all endogenous variables for one covariate
/// vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Structure {
    pub shift: DVector<f64>,
    pub paths: DMatrix<f64>,
    pub residual_cov: DMatrix<f64>,
}

/// Full reduced form over all endogenous variables.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedForm {
    /// `(I - B_i)^-1`.
    pub transfer: DMatrix<f64>,
    /// `a + G x_i`.
    pub shift: DVector<f64>,
    /// Residual covariance `P`.
    pub residual_cov: DMatrix<f64>,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

pub fn compile(spec: &ModelSpec) -> Result<ParameterMap> {
    spec.check_structure()?;
    let mut fixed: HashMap<&str, f64> = HashMap::new();
    for (label, v) in &spec.fixed_labels {
        if let Some(prev) = fixed.insert(label.as_str(), *v) {
            if prev != *v {
                return Err(Error::Model(format!(
                    "label '{label}' fixed to both {prev} and {v}"
                )));
            }
        }
    }
    let endo = |n: &str| spec.endogenous_index(n).expect("checked");
    let p = spec.manifest.len();

    let mut cells: Vec<(Group, Cell, &Constraint, String)> = Vec::new();
    let mut regressions = Vec::new();
    for e in &spec.edges {
        let to = endo(&e.to);
        let name = format!("{}<-{}", e.to, e.from);
        match spec.endogenous_index(&e.from) {
            Some(from) => {
                let group = if from >= p && to < p {
                    Group::Measurements
                } else {
                    Group::Regressions
                };
                let entry = (group, Cell::Path { to, from }, &e.constraint, name);
                if group == Group::Measurements {
                    cells.push(entry);
                } else {
                    regressions.push(entry);
                }
            }
            None => {
                let covariate = spec.covariate_index(&e.from).expect("checked");
                regressions.push((
                    Group::Regressions,
                    Cell::Covariate { to, covariate },
                    &e.constraint,
                    name,
                ));
            }
        }
    }
    cells.extend(regressions);
    for s in &spec.slopes {
        cells.push((
            Group::RandomSlopes,
            Cell::Slope {
                to: endo(&s.outcome),
                from: endo(&s.latent),
                covariate: spec.covariate_index(&s.covariate).expect("checked"),
            },
            &s.constraint,
            format!("{}<-{}*{}", s.outcome, s.latent, s.covariate),
        ));
    }
    for (v, c) in &spec.intercepts {
        cells.push((Group::Intercepts, Cell::Intercept(endo(v)), c, v.clone()));
    }
    for (v, c) in &spec.variances {
        let i = endo(v);
        cells.push((
            Group::ResidualVariances,
            Cell::Covariance(i, i),
            c,
            format!("{v}~~{v}"),
        ));
    }
    for c in &spec.covariances {
        cells.push((
            Group::ResidualCovariances,
            Cell::Covariance(endo(&c.a), endo(&c.b)),
            &c.constraint,
            format!("{}~~{}", c.a, c.b),
        ));
    }

    let mut params: Vec<Parameter> = Vec::new();
    let mut by_label: HashMap<&str, usize> = HashMap::new();
    let mut entries = Vec::with_capacity(cells.len());
    for (group, cell, constraint, name) in cells {
        let is_variance = matches!(cell, Cell::Covariance(a, b) if a == b);
        let value = match constraint {
            Constraint::Fixed(v) => Value::Fixed(*v),
            Constraint::Label(l) if fixed.contains_key(l.as_str()) => Value::Fixed(fixed[l.as_str()]),
            Constraint::Label(l) => match by_label.get(l.as_str()) {
                Some(&t) => {
                    if params[t].log_scale != is_variance {
                        return Err(Error::Model(format!(
                            "label '{l}' is shared between a variance and another kind of parameter"
                        )));
                    }
                    params[t].cells.push(cell);
                    Value::Free(t)
                }
                None => {
                    by_label.insert(l.as_str(), params.len());
                    params.push(Parameter {
                        name: l.clone(),
                        group,
                        log_scale: is_variance,
                        cells: vec![cell],
                    });
                    Value::Free(params.len() - 1)
                }
            },
            Constraint::Free => {
                params.push(Parameter {
                    name,
                    group,
                    log_scale: is_variance,
                    cells: vec![cell],
                });
                Value::Free(params.len() - 1)
            }
        };
        if let Value::Fixed(v) = value {
            if is_variance && !(v >= 0.0) {
                return Err(Error::Model(format!("variance fixed to negative value {v}")));
            }
        }
        entries.push((cell, value));
    }
    let unused: Vec<&str> = fixed
        .keys()
        .filter(|l| {
            !spec.edges.iter().any(|e| e.constraint == Constraint::Label(l.to_string()))
                && !spec.slopes.iter().any(|e| e.constraint == Constraint::Label(l.to_string()))
                && !spec.covariances.iter().any(|e| e.constraint == Constraint::Label(l.to_string()))
                && !spec
                    .intercepts
                    .iter()
                    .chain(spec.variances.iter())
                    .any(|(_, c)| *c == Constraint::Label(l.to_string()))
        })
        .copied()
        .collect();
    if let Some(l) = unused.iter().min() {
        return Err(Error::Model(format!("fixed label '{l}' is not used")));
    }
    let mut seen = HashMap::new();
    for (t, prm) in params.iter().enumerate() {
        if let Some(prev) = seen.insert(prm.name.clone(), t) {
            return Err(Error::Model(format!(
                "parameter name '{}' is used twice (positions {prev} and {t})",
                prm.name
            )));
        }
    }
    // Stable sort by group keeps declaration order within each group.
    let mut order: Vec<usize> = (0..params.len()).collect();
    order.sort_by_key(|&t| params[t].group);
    let mut rank = vec![0; params.len()];
    for (new, &old) in order.iter().enumerate() {
        rank[old] = new;
    }
    let params: Vec<Parameter> = order.iter().map(|&t| params[t].clone()).collect();
    for e in entries.iter_mut() {
        if let Value::Free(t) = e.1 {
            e.1 = Value::Free(rank[t]);
        }
    }
    Ok(ParameterMap {
        spec: spec.clone(),
        params,
        entries,
    })
}

impl ParameterMap {
    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.params.len()
    }

    pub fn parameters(&self) -> &[Parameter] {
        &self.params
    }

    pub fn names(&self) -> Vec<String> {
        self.params.iter().map(|p| p.name.clone()).collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    /// Cells filled by parameter `t`.
    pub fn slots(&self, t: usize) -> &[Cell] {
        &self.params[t].cells
    }

    /// Cells held at fixed values.
    pub fn fixed_cells(&self) -> impl Iterator<Item = (Cell, f64)> + '_ {
        self.entries.iter().filter_map(|(c, v)| match v {
            Value::Fixed(x) => Some((*c, *x)),
            Value::Free(_) => None,
        })
    }

    pub fn n_manifest(&self) -> usize {
        self.spec.manifest.len()
    }

    pub fn n_endogenous(&self) -> usize {
        self.spec.manifest.len() + self.spec.latent.len()
    }

    pub fn n_covariates(&self) -> usize {
        self.spec.covariates.len()
    }

    /// Natural-scale parameter values.
    pub fn natural(&self, theta: &[f64]) -> Vec<f64> {
        theta
            .iter()
            .zip(&self.params)
            .map(|(&t, p)| if p.log_scale { t.exp() } else { t })
            .collect()
    }

    /// Inverse of [`natural`](Self::natural).
    pub fn internal(&self, natural: &[f64]) -> Result<Vec<f64>> {
        if natural.len() != self.dim() {
            return Err(Error::Dimension(format!(
                "expected {} parameter values, got {}",
                self.dim(),
                natural.len()
            )));
        }
        natural
            .iter()
            .zip(&self.params)
            .map(|(&v, p)| {
                if !p.log_scale {
                    Ok(v)
                } else if v > 0.0 {
                    Ok(v.ln())
                } else {
                    Err(Error::Model(format!(
                        "variance '{}' must be positive, got {v}",
                        p.name
                    )))
                }
            })
            .collect()
    }

    /// Internal values for intercepts and covariances at zero and every other
    /// parameter at one.
    pub fn default_values(&self) -> Vec<f64> {
        self.params
            .iter()
            .map(|p| match p.group {
                Group::Intercepts | Group::ResidualCovariances | Group::ResidualVariances => 0.0,
                _ => 1.0,
            })
            .collect()
    }

    fn check_lengths(&self, theta: &[f64], x: &[f64]) -> Result<()> {
        if theta.len() != self.dim() {
            return Err(Error::Dimension(format!(
                "expected {} parameters, got {}",
                self.dim(),
                theta.len()
            )));
        }
        if x.len() != self.n_covariates() {
            return Err(Error::Dimension(format!(
                "expected {} covariates, got {}",
                self.n_covariates(),
                x.len()
            )));
        }
        if let Some(j) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "covariate '{}' is missing or not finite",
                self.spec.covariates[j]
            )));
        }
        Ok(())
    }

    /// Intercept shift `a + G x`, slope-adjusted path matrix `B_i` and
    /// residual covariance `P` at the given parameters.
    pub fn structure(&self, theta: &[f64], x: &[f64]) -> Result<Structure> {
        self.check_lengths(theta, x)?;
        let vals = self.natural(theta);
        let m = self.n_endogenous();
        let mut a = DVector::zeros(m);
        let mut b = DMatrix::zeros(m, m);
        let mut pcov = DMatrix::zeros(m, m);
        for (cell, value) in &self.entries {
            let v = match value {
                Value::Fixed(v) => *v,
                Value::Free(t) => vals[*t],
            };
            match *cell {
                Cell::Intercept(r) => a[r] += v,
                Cell::Path { to, from } => b[(to, from)] += v,
                Cell::Covariate { to, covariate } => a[to] += v * x[covariate],
                Cell::Slope { to, from, covariate } => b[(to, from)] += v * x[covariate],
                Cell::Covariance(r, c) => {
                    pcov[(r, c)] += v;
                    if r != c {
                        pcov[(c, r)] += v;
                    }
                }
            }
        }
        Ok(Structure {
            shift: a,
            paths: b,
            residual_cov: pcov,
        })
    }

    pub fn reduced_form(&self, theta: &[f64], x: &[f64]) -> Result<ReducedForm> {
        let Structure {
            shift: a,
            paths: b,
            residual_cov: pcov,
        } = self.structure(theta, x)?;
        let m = self.n_endogenous();
        let ib = DMatrix::identity(m, m) - &b;
        let transfer = ib.clone().lu().try_inverse().ok_or_else(|| Error::NearSingular {
            condition: f64::INFINITY,
            context: "(I - B) at the current parameters".into(),
        })?;
        let condition = norm_inf(&ib) * norm_inf(&transfer);
        if !condition.is_finite() || condition > crate::mvn::MAX_CONDITION {
            return Err(Error::NearSingular {
                condition,
                context: "(I - B) at the current parameters".into(),
            });
        }
        let mean = &transfer * &a;
        let cov = &transfer * &pcov * transfer.transpose();
        let cov = (&cov + cov.transpose()) * 0.5;
        Ok(ReducedForm {
            transfer,
            shift: a,
            residual_cov: pcov,
            mean,
            cov,
        })
    }

    pub fn implied_moments(&self, theta: &[f64], x: &[f64]) -> Result<MomentSystem> {
        let rf = self.reduced_form(theta, x)?;
        let vals = self.natural(theta);
        let p = self.n_manifest();
        let d = self.dim();
        let a = &rf.transfer;
        let xi = rf.mean.rows(0, p).into_owned();
        let omega = rf.cov.view((0, 0), (p, p)).into_owned();
        let mut dxi = DMatrix::zeros(p, d);
        let mut domega = DMatrix::zeros(p * p, d);
        for (cell, value) in &self.entries {
            let t = match value {
                Value::Free(t) => *t,
                Value::Fixed(_) => continue,
            };
            let w = if self.params[t].log_scale { vals[t] } else { 1.0 };
            match *cell {
                Cell::Intercept(r) => {
                    for i in 0..p {
                        dxi[(i, t)] += w * a[(i, r)];
                    }
                }
                Cell::Covariate { to, covariate } => {
                    let s = w * x[covariate];
                    for i in 0..p {
                        dxi[(i, t)] += s * a[(i, to)];
                    }
                }
                Cell::Path { to, from } => path_derivative(&rf, p, to, from, w, t, &mut dxi, &mut domega),
                Cell::Slope { to, from, covariate } => {
                    path_derivative(&rf, p, to, from, w * x[covariate], t, &mut dxi, &mut domega)
                }
                Cell::Covariance(r, c) => {
                    for j in 0..p {
                        for i in 0..p {
                            let v = if r == c {
                                a[(i, r)] * a[(j, r)]
                            } else {
                                a[(i, r)] * a[(j, c)] + a[(i, c)] * a[(j, r)]
                            };
                            domega[(i + j * p, t)] += w * v;
                        }
                    }
                }
            }
        }
        Ok(MomentSystem {
            xi,
            omega,
            dxi,
            domega,
        })
    }
}

fn norm_inf(a: &DMatrix<f64>) -> f64 {
    a.row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Adds the derivative with respect to a coefficient entering `B[to, from]`
/// with multiplier `w`: `dA = A dB A` gives `dm = w A[:,to] m[from]` and
/// `dC = w (A[:,to] C[from,:] + C[:,from] A[:,to]')`.
#[allow(clippy::too_many_arguments)]
fn path_derivative(
    rf: &ReducedForm,
    p: usize,
    to: usize,
    from: usize,
    w: f64,
    t: usize,
    dxi: &mut DMatrix<f64>,
    domega: &mut DMatrix<f64>,
) {
    let a = &rf.transfer;
    for i in 0..p {
        dxi[(i, t)] += w * a[(i, to)] * rf.mean[from];
    }
    for j in 0..p {
        for i in 0..p {
            domega[(i + j * p, t)] +=
                w * (a[(i, to)] * rf.cov[(from, j)] + a[(j, to)] * rf.cov[(from, i)]);
        }
    }
}

pub fn implied_moments(pm: &ParameterMap, theta: &[f64], row_covariates: &[f64]) -> Result<MomentSystem> {
    pm.implied_moments(theta, row_covariates)
}

fn mean_var(values: impl Iterator<Item = f64>) -> Option<(f64, f64, usize)> {
    let v: Vec<f64> = values.filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Some((mean, var, v.len()))
}

/// Least-squares slope of `y` on `x` over rows where both are finite and
/// `keep` holds.
fn ls_slope(y: &[f64], x: &[f64], keep: impl Fn(usize) -> bool) -> Option<f64> {
    let idx: Vec<usize> = (0..y.len())
        .filter(|&i| y[i].is_finite() && x[i].is_finite() && keep(i))
        .collect();
    if idx.len() < 3 {
        return None;
    }
    let n = idx.len() as f64;
    let mx = idx.iter().map(|&i| x[i]).sum::<f64>() / n;
    let my = idx.iter().map(|&i| y[i]).sum::<f64>() / n;
    let sxx: f64 = idx.iter().map(|&i| (x[i] - mx).powi(2)).sum();
    let sxy: f64 = idx.iter().map(|&i| (x[i] - mx) * (y[i] - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Variance floor for starting values.
const MIN_START_VARIANCE: f64 = 0.1;

/// Deterministic starting values on the internal scale.
pub fn starting_values(pm: &ParameterMap, data: &Dataset) -> Result<Vec<f64>> {
    if data.n_rows() == 0 {
        return Err(Error::Data("dataset has no rows".into()));
    }
    let spec = &pm.spec;
    let p = spec.manifest.len();
    let column = |name: &str| -> Result<usize> {
        data.index(name)
            .ok_or_else(|| Error::Data(format!("data has no column '{name}'")))
    };
    let mut manifest_cols = Vec::with_capacity(p);
    for name in &spec.manifest {
        manifest_cols.push(column(name)?);
    }
    let mut covariate_cols = Vec::new();
    for name in &spec.covariates {
        covariate_cols.push(column(name)?);
    }
    let exact = |i: usize, row: usize| data.status(row, manifest_cols[i]) == crate::data::Status::Observed;

    let mut natural = Vec::with_capacity(pm.dim());
    for prm in &pm.params {
        let v = match (prm.group, prm.cells[0]) {
            (Group::Intercepts, Cell::Intercept(r)) if r < p => {
                if spec.kinds[r] == Kind::Binary {
                    0.0
                } else {
                    mean_var(data.column_at(manifest_cols[r]).iter().copied()).map_or(0.0, |s| s.0)
                }
            }
            (Group::ResidualVariances, Cell::Covariance(r, _)) if r < p => {
                if spec.kinds[r] == Kind::Binary {
                    1.0
                } else {
                    mean_var(data.column_at(manifest_cols[r]).iter().copied())
                        .map_or(1.0, |s| s.1)
                        .max(MIN_START_VARIANCE)
                }
            }
            (Group::ResidualVariances, _) => 1.0,
            (Group::Measurements, _) => 1.0,
            (Group::Regressions, Cell::Covariate { to, covariate }) => {
                let x = data.column_at(covariate_cols[covariate]);
                // Effects on a latent variable are read off its scaling
                // indicator, whose loading is one.
                let target = if to < p {
                    Some(to)
                } else {
                    pm.entries.iter().find_map(|(c, v)| match (c, v) {
                        (Cell::Path { to: y, from }, Value::Fixed(l))
                            if *from == to && *y < p && *l == 1.0 =>
                        {
                            Some(*y)
                        }
                        _ => None,
                    })
                };
                match target {
                    Some(y) if spec.kinds[y] != Kind::Binary => {
                        ls_slope(data.column_at(manifest_cols[y]), x, |row| exact(y, row))
                            .unwrap_or(0.0)
                    }
                    _ => 0.0,
                }
            }
            _ => 0.0,
        };
        natural.push(v);
    }
    pm.internal(&natural)
}

#[cfg(test)]
pub(crate) mod tests;

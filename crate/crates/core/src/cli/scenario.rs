//! Scenario files: metrics, chart changes, seed, tolerances and suite sizes.

use std::path::Path;

use rand::Rng;
use serde::Deserialize;

use crate::domain::{DomainBox, Interval};
use crate::dtensor::ExprField;
use crate::error::{Error, Result};
use crate::geometry::{Factor, Metric};
use crate::jetspace::JetPoint;
use crate::numdiff::catalog::Family;
use crate::numdiff::ChangeMap;
use crate::suite::{seeded_jets, stream};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub temporal: FactorSpec,
    pub spatial: FactorSpec,
    #[serde(default)]
    pub changes: Vec<ChangeSpec>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub sizes: SuiteSizes,
    /// Extra fields claimed to be d-tensors, checked by the `dtensors` suite.
    #[serde(default)]
    pub candidates: Vec<CandidateSpec>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FactorSpec {
    pub dim: usize,
    pub metric: MetricSpec,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum MetricSpec {
    Catalog(String),
    Explicit {
        components: Vec<Vec<String>>,
        #[serde(default)]
        domain: Option<Vec<Interval>>,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChangeSpec {
    pub name: String,
    /// `affine` or `perturbed`; a fresh seeded instance is drawn per use.
    #[serde(default)]
    pub catalog: Option<String>,
    #[serde(default)]
    pub forward_t: Option<Vec<String>>,
    #[serde(default)]
    pub forward_x: Option<Vec<String>>,
    #[serde(default)]
    pub inverse_t: Option<Vec<String>>,
    #[serde(default)]
    pub inverse_x: Option<Vec<String>>,
    #[serde(default)]
    pub domain: Option<DomainBox>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    /// Relative tolerance of the transformation-law checks.
    #[serde(default = "default_symbolic")]
    pub symbolic: f64,
    /// Floor below which a flow-oracle discrepancy counts as exact.
    #[serde(default = "default_fd")]
    pub fd: f64,
}

fn default_symbolic() -> f64 {
    1e-8
}

fn default_fd() -> f64 {
    1e-7
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            symbolic: default_symbolic(),
            fd: default_fd(),
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteSizes {
    #[serde(default = "default_changes")]
    pub changes: usize,
    #[serde(default = "default_jets")]
    pub jets: usize,
}

fn default_changes() -> usize {
    10
}

fn default_jets() -> usize {
    10
}

impl Default for SuiteSizes {
    fn default() -> Self {
        SuiteSizes {
            changes: default_changes(),
            jets: default_jets(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CandidateSpec {
    pub name: String,
    pub signature: String,
    pub components: Vec<String>,
}

/// JSON pointer (RFC 6901) for a serde_path_to_error path.
fn pointer(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        out.push('/');
        match seg {
            Segment::Seq { index } => out.push_str(&index.to_string()),
            Segment::Map { key } => out.push_str(&key.replace('~', "~0").replace('/', "~1")),
            Segment::Enum { variant } => out.push_str(variant),
            Segment::Unknown => out.push('?'),
        }
    }
    if out.is_empty() {
        out.push('/');
    }
    out
}

fn scenario_err(pointer: impl Into<String>, message: impl std::fmt::Display) -> Error {
    Error::Scenario {
        pointer: pointer.into(),
        message: message.to_string(),
    }
}

impl Scenario {
    pub fn from_json(src: &str) -> Result<Scenario> {
        let de = &mut serde_json::Deserializer::from_str(src);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let p = pointer(e.path());
            scenario_err(p, e.into_inner())
        })
    }

    pub fn load(path: &Path) -> Result<Scenario> {
        let src = std::fs::read_to_string(path).map_err(|source| Error::Read {
            path: path.display().to_string(),
            source,
        })?;
        Scenario::from_json(&src)
    }
}

#[derive(Debug, Clone)]
enum ChangeEntry {
    Catalog { name: String, family: Family },
    Explicit(ChangeMap),
}

/// A validated scenario with its geometry built.
#[derive(Debug, Clone)]
pub struct Setup {
    pub h: Metric,
    pub phi: Metric,
    pub seed: u64,
    pub tol: Tolerances,
    pub sizes: SuiteSizes,
    pub candidates: Vec<ExprField>,
    changes: Vec<ChangeEntry>,
}

fn build_metric(spec: &FactorSpec, factor: Factor, at: &str) -> Result<Metric> {
    if spec.dim == 0 {
        return Err(scenario_err(format!("{at}/dim"), "dimension must be positive"));
    }
    let metric = match &spec.metric {
        MetricSpec::Catalog(name) => Metric::catalog(name, factor, spec.dim),
        MetricSpec::Explicit { components, domain } => {
            if components.len() != spec.dim || components.iter().any(|r| r.len() != spec.dim) {
                return Err(scenario_err(
                    format!("{at}/metric/components"),
                    format!("expected a {0}x{0} matrix", spec.dim),
                ));
            }
            let rows: Vec<Vec<&str>> = components.iter().map(|r| r.iter().map(String::as_str).collect()).collect();
            let domain = domain.clone().unwrap_or_else(|| vec![Interval::UNBOUNDED; spec.dim]);
            Metric::parse(format!("{at}-metric"), factor, &rows, domain)
        }
    };
    metric.map_err(|e| scenario_err(format!("{at}/metric"), e))
}

impl Setup {
    pub fn new(s: &Scenario) -> Result<Setup> {
        let h = build_metric(&s.temporal, Factor::Temporal, "/temporal")?;
        let phi = build_metric(&s.spatial, Factor::Spatial, "/spatial")?;
        let (p, n) = (h.dim(), phi.dim());
        let mut changes = Vec::new();
        for (k, c) in s.changes.iter().enumerate() {
            let at = format!("/changes/{k}");
            let explicit = [&c.forward_t, &c.forward_x, &c.inverse_t, &c.inverse_x];
            let entry = match (&c.catalog, explicit.iter().all(|e| e.is_some())) {
                (Some(family), false) if explicit.iter().all(|e| e.is_none()) => ChangeEntry::Catalog {
                    name: c.name.clone(),
                    family: Family::from_name(family)
                        .ok_or_else(|| scenario_err(format!("{at}/catalog"), Error::UnknownCatalog(family.clone())))?,
                },
                (None, true) => {
                    fn strs(v: &Option<Vec<String>>) -> Vec<&str> {
                        v.iter().flatten().map(String::as_str).collect()
                    }
                    let domain = c.domain.clone().unwrap_or_else(|| DomainBox::unbounded(p, n));
                    let map = ChangeMap::parse(
                        c.name.clone(),
                        &strs(&c.forward_t),
                        &strs(&c.forward_x),
                        &strs(&c.inverse_t),
                        &strs(&c.inverse_x),
                        domain,
                    )
                    .map_err(|e| scenario_err(&at, e))?;
                    let mut rng = stream(s.seed, "validate");
                    let pts: Vec<_> = (0..8).map(|_| map.domain().sample(&mut rng)).collect();
                    map.validate(&pts).map_err(|e| scenario_err(&at, e))?;
                    if (map.p(), map.n()) != (p, n) {
                        return Err(scenario_err(
                            &at,
                            format!("change acts on (p, n) = ({}, {}), scenario has ({p}, {n})", map.p(), map.n()),
                        ));
                    }
                    ChangeEntry::Explicit(map)
                }
                _ => {
                    return Err(scenario_err(
                        &at,
                        "give either `catalog` or all of forward_t, forward_x, inverse_t, inverse_x",
                    ))
                }
            };
            changes.push(entry);
        }
        if changes.is_empty() {
            changes = vec![
                ChangeEntry::Catalog {
                    name: "affine".into(),
                    family: Family::Affine,
                },
                ChangeEntry::Catalog {
                    name: "perturbed".into(),
                    family: Family::Perturbed,
                },
            ];
        }
        let candidates = s
            .candidates
            .iter()
            .enumerate()
            .map(|(k, c)| {
                let comps: Vec<&str> = c.components.iter().map(String::as_str).collect();
                ExprField::parse(c.name.clone(), &c.signature, p, n, &comps).map_err(|e| scenario_err(format!("/candidates/{k}"), e))
            })
            .collect::<Result<_>>()?;
        if s.sizes.changes == 0 || s.sizes.jets == 0 {
            return Err(scenario_err("/sizes", "suite sizes must be positive"));
        }
        Ok(Setup {
            h,
            phi,
            seed: s.seed,
            tol: s.tolerances,
            sizes: s.sizes,
            candidates,
            changes,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.h.dim(), self.phi.dim())
    }

    pub fn with_seed(mut self, seed: u64) -> Setup {
        self.seed = seed;
        self
    }

    /// `sizes.changes` changes cycling through the scenario list; catalog
    /// entries are drawn afresh from `rng` each time.
    pub fn suite_changes<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<ChangeMap>> {
        let (p, n) = self.dims();
        (0..self.sizes.changes)
            .map(|k| match &self.changes[k % self.changes.len()] {
                ChangeEntry::Catalog { name, family } => {
                    family.build(rng, &format!("{name}-{k}"), p, n, DomainBox::unbounded(p, n))
                }
                ChangeEntry::Explicit(c) => Ok(c.clone()),
            })
            .collect()
    }

    /// Box where both metrics and every explicit change are defined.
    pub fn sample_box(&self) -> DomainBox {
        let mut b = DomainBox {
            t: self.h.domain().to_vec(),
            x: self.phi.domain().to_vec(),
        };
        for c in &self.changes {
            if let ChangeEntry::Explicit(c) = c {
                b = b.intersect(c.domain());
            }
        }
        b
    }

    pub fn suite_jets<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<JetPoint> {
        seeded_jets(rng, &self.sample_box(), self.sizes.jets)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FLAT: &str = r#"{
        "temporal": {"dim": 1, "metric": "euclidean"},
        "spatial": {"dim": 2, "metric": "euclidean"},
        "seed": 3
    }"#;

    #[test]
    fn minimal_scenario_uses_defaults() {
        let s = Scenario::from_json(FLAT).unwrap();
        let setup = Setup::new(&s).unwrap();
        assert_eq!(setup.dims(), (1, 2));
        assert_eq!(setup.tol.symbolic, 1e-8);
        let mut rng = stream(setup.seed, "x");
        let cs = setup.suite_changes(&mut rng).unwrap();
        assert_eq!(cs.len(), 10);
        assert_eq!(cs[0].name(), "affine-0");
        assert_eq!(cs[1].name(), "perturbed-1");
    }

    #[test]
    fn schema_errors_carry_a_pointer() {
        let bad = r#"{"temporal": {"dim": 1, "metric": "euclidean"}, "spatial": {"dim": "two", "metric": "sphere"}}"#;
        match Scenario::from_json(bad) {
            Err(Error::Scenario { pointer, .. }) => assert_eq!(pointer, "/spatial/dim"),
            other => panic!("{other:?}"),
        }
        let extra = r#"{"temporal": {"dim": 1, "metric": "euclidean", "colour": 1}, "spatial": {"dim": 1, "metric": "euclidean"}}"#;
        assert!(matches!(Scenario::from_json(extra), Err(Error::Scenario { .. })));
    }

    #[test]
    fn semantic_errors_carry_a_pointer() {
        let miss = r#"{"temporal": {"dim": 1, "metric": "euclidean"}, "spatial": {"dim": 2, "metric": "torus"}}"#;
        match Setup::new(&Scenario::from_json(miss).unwrap()) {
            Err(Error::Scenario { pointer, .. }) => assert_eq!(pointer, "/spatial/metric"),
            other => panic!("{other:?}"),
        }
        let dims = r#"{"temporal": {"dim": 1, "metric": "euclidean"}, "spatial": {"dim": 3, "metric": "sphere:2"}}"#;
        assert!(Setup::new(&Scenario::from_json(dims).unwrap()).is_err());
        let change = r#"{"temporal": {"dim": 1, "metric": "euclidean"}, "spatial": {"dim": 1, "metric": "euclidean"},
            "changes": [{"name": "c", "catalog": "affine"}, {"name": "d", "catalog": "warp"}]}"#;
        match Setup::new(&Scenario::from_json(change).unwrap()) {
            Err(Error::Scenario { pointer, .. }) => assert_eq!(pointer, "/changes/1/catalog"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn explicit_changes_restrict_the_sample_box() {
        let src = r#"{
            "temporal": {"dim": 1, "metric": "euclidean"},
            "spatial": {"dim": 1, "metric": {"components": [["1"]]}},
            "changes": [{"name": "log", "forward_t": ["t1"], "forward_x": ["log(x1)"],
                         "inverse_t": ["t1"], "inverse_x": ["exp(x1)"],
                         "domain": {"t": [[-1, 1]], "x": [[0.5, 2]]}}]
        }"#;
        let setup = Setup::new(&Scenario::from_json(src).unwrap()).unwrap();
        let mut rng = stream(1, "b");
        for u in setup.suite_jets(&mut rng) {
            assert!(u.x()[0] >= 0.5 && u.x()[0] <= 2.0);
        }
    }
}

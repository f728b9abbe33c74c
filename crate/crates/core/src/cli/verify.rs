//! The verification suites behind `jetflow verify`.

use serde::Serialize;

use crate::connection::{check_coframe_law, check_frame_law, connection_from_sprays, sprays_from_connection, NonlinearConnection};
use crate::domain::DomainBox;
use crate::dtensor::{
    energy_lagrangian, is_dtensor, Components, JetField, LagrangianMetric, LiouvilleC, TemporalMetricField, Verdict, Witness,
};
use crate::error::{Error, Result};
use crate::jetspace::JetPoint;
use crate::numdiff::ChangeMap;
use crate::prolong::{flow_prolong_check_in, BaseVectorField, TotalDifferential, VerticalGap};
use crate::sprays::{MultiTimeSpray, Spray};
use crate::suite::stream;

use super::scenario::Setup;

pub const SUITES: [&str; 5] = ["adapted", "connection", "dtensors", "prolong", "sprays"];

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub pairs: usize,
    pub max_rel_err: f64,
    pub pass: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<Witness>,
}

impl Check {
    fn from_verdict(name: impl Into<String>, v: Verdict) -> Check {
        Check {
            name: name.into(),
            pairs: v.pairs,
            max_rel_err: v.max_rel_err,
            pass: v.pass,
            witness: v.witness,
        }
    }

    fn failed(name: impl Into<String>, e: Error) -> Check {
        Check {
            name: name.into(),
            pairs: 0,
            max_rel_err: f64::INFINITY,
            pass: false,
            witness: Some(Witness {
                change: String::new(),
                point: None,
                component: Vec::new(),
                predicted: f64::NAN,
                native: f64::NAN,
                error: Some(e.to_string()),
            }),
        }
    }

    /// A negative control passes when the underlying check fails.
    fn negated(name: impl Into<String>, v: Verdict) -> Check {
        Check {
            pass: !v.pass,
            ..Check::from_verdict(name, v)
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub suite: String,
    pub checks: Vec<Check>,
}

impl Report {
    pub fn pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    /// Pretty JSON with lexicographically ordered keys.
    pub fn to_json(&self) -> String {
        let value = serde_json::to_value(self).expect("report is serialisable");
        let mut s = serde_json::to_string_pretty(&value).expect("value is serialisable");
        s.push('\n');
        s
    }
}

/// Pointwise comparison at jets, reported like a law check.
fn compare_at<F>(name: &str, jets: &[JetPoint], tol: f64, pair: F) -> Check
where
    F: Fn(&JetPoint) -> Result<(Components, Components)>,
{
    let mut v = Verdict::empty();
    for u in jets {
        let (predicted, native) = match pair(u) {
            Ok(x) => x,
            Err(e) => return Check::failed(name, e),
        };
        let (err, at) = Components::max_rel_err(&predicted, &native);
        let pass = err < tol;
        v = v.merge(Verdict {
            pairs: 1,
            max_rel_err: err,
            pass,
            witness: (!pass).then(|| Witness {
                change: "identity".into(),
                point: Some(u.clone()),
                component: native.unravel(at),
                predicted: predicted.data()[at],
                native: native.data()[at],
                error: None,
            }),
        });
    }
    Check::from_verdict(name, v)
}

struct Ctx<'a> {
    setup: &'a Setup,
    changes: Vec<ChangeMap>,
    jets: Vec<JetPoint>,
}

impl<'a> Ctx<'a> {
    fn new(setup: &'a Setup, suite: &str) -> Result<Ctx<'a>> {
        let mut rng = stream(setup.seed, suite);
        let changes = setup.suite_changes(&mut rng)?;
        let jets = setup.suite_jets(&mut rng);
        Ok(Ctx { setup, changes, jets })
    }

    fn tol(&self) -> f64 {
        self.setup.tol.symbolic
    }

    fn dtensor(&self, name: &str, f: &dyn JetField) -> Check {
        Check::from_verdict(name, is_dtensor(f, &self.changes, &self.jets, self.tol()))
    }
}

fn suite_dtensors(cx: &Ctx) -> Result<Vec<Check>> {
    let (p, n) = cx.setup.dims();
    let h = &cx.setup.h;
    let mut out = vec![
        cx.dtensor("dtensors.liouville_c", &LiouvilleC::new(p, n)),
        cx.dtensor("dtensors.liouville_l", &TemporalMetricField::liouville_l(h.clone(), n)),
        cx.dtensor("dtensors.normalization_j", &TemporalMetricField::normalization_j(h.clone(), n)),
        cx.dtensor(
            "dtensors.energy_hessian",
            &LagrangianMetric::new(energy_lagrangian(h, &cx.setup.phi), p, n),
        ),
    ];
    for c in &cx.setup.candidates {
        out.push(cx.dtensor(&format!("dtensors.candidate.{}", c.name()), c));
    }
    Ok(out)
}

/// Negative control: a spray is not a d-tensor, visible only when it is
/// nonzero somewhere and some change is non-affine in the relevant factor.
fn negative_control(cx: &Ctx, name: &str, s: &Spray, affine: impl Fn(&ChangeMap) -> bool) -> Result<Option<Check>> {
    let mut nonzero = false;
    for u in &cx.jets {
        nonzero |= s.eval(u)?.max_abs() > 1e-12;
    }
    if !nonzero || cx.changes.iter().all(affine) {
        return Ok(None);
    }
    Ok(Some(Check::negated(name, is_dtensor(s.field().as_ref(), &cx.changes, &cx.jets, cx.tol()))))
}

fn suite_sprays(cx: &Ctx) -> Result<Vec<Check>> {
    let s = MultiTimeSpray::canonical(&cx.setup.h, &cx.setup.phi)?;
    let mut out = vec![
        Check::from_verdict("sprays.temporal_law", s.temporal.check_law(&cx.changes, &cx.jets, cx.tol())),
        Check::from_verdict("sprays.spatial_law", s.spatial.check_law(&cx.changes, &cx.jets, cx.tol())),
    ];
    out.extend(negative_control(cx, "sprays.temporal_not_dtensor", &s.temporal, ChangeMap::temporal_is_affine)?);
    out.extend(negative_control(cx, "sprays.spatial_not_dtensor", &s.spatial, ChangeMap::spatial_is_affine)?);
    Ok(out)
}

fn suite_connection(cx: &Ctx) -> Result<Vec<Check>> {
    let (h, phi) = (&cx.setup.h, &cx.setup.phi);
    let g = NonlinearConnection::canonical(h, phi)?;
    let (m, n) = g.check_law(&cx.changes, &cx.jets, cx.tol());
    let s = MultiTimeSpray::canonical(h, phi)?;
    let from_s = connection_from_sprays(&s, h)?;
    let back = sprays_from_connection(&from_s)?;
    Ok(vec![
        Check::from_verdict("connection.m_law", m),
        Check::from_verdict("connection.n_law", n),
        compare_at("connection.m_equals_2h", &cx.jets, cx.tol(), |u| {
            let mut two_h = s.temporal.eval(u)?;
            two_h.scale(2.0);
            Ok((from_s.m().eval(u)?, two_h))
        }),
        compare_at("connection.spatial_round_trip", &cx.jets, cx.tol(), |u| {
            Ok((back.spatial.eval(u)?, s.spatial.eval(u)?))
        }),
    ])
}

fn suite_adapted(cx: &Ctx) -> Result<Vec<Check>> {
    let g = NonlinearConnection::canonical(&cx.setup.h, &cx.setup.phi)?;
    Ok(vec![
        Check::from_verdict("adapted.frame_law", check_frame_law(&g, &cx.changes, &cx.jets, cx.tol())),
        Check::from_verdict("adapted.coframe_law", check_coframe_law(&g, &cx.changes, &cx.jets, cx.tol())),
    ])
}

/// Prolongation fields exercised by the suite.
pub const PROLONG_FIELDS: [&str; 3] = ["t1dt1", "x1dx1", "mixed"];

const FLOW_EPS: f64 = 1e-2;

/// Ratio of flow-oracle discrepancies at `ε` and `ε/2`; `None` when the
/// discrepancy at `ε` is below `floor` (the flow is exact to FD accuracy).
pub fn flow_ratio(x: &BaseVectorField, u: &JetPoint, eps: f64, floor: f64, domain: &DomainBox) -> Result<Option<f64>> {
    let coarse = flow_prolong_check_in(x, u, eps, domain)?;
    if coarse < floor {
        return Ok(None);
    }
    let fine = flow_prolong_check_in(x, u, eps / 2.0, domain)?;
    Ok(Some(coarse / fine))
}

fn suite_prolong(cx: &Ctx) -> Result<Vec<Check>> {
    let (p, n) = cx.setup.dims();
    let g = NonlinearConnection::canonical(&cx.setup.h, &cx.setup.phi)?;
    let domain = cx.setup.sample_box();
    let mut out = Vec::new();
    for name in PROLONG_FIELDS {
        let x = BaseVectorField::catalog(name, p, n)?;
        out.push(cx.dtensor(&format!("prolong.gap.{name}"), &VerticalGap::new(x.clone(), g.clone())?));
        // order of the flow oracle: |ratio/4 − 1| ≤ 1/8
        let mut v = Verdict::empty();
        let mut failure = None;
        for u in &cx.jets {
            match flow_ratio(&x, u, FLOW_EPS, cx.setup.tol.fd, &domain) {
                Ok(r) => {
                    let err = r.map_or(0.0, |r| (r / 4.0 - 1.0).abs());
                    let pass = err <= 0.125;
                    v = v.merge(Verdict {
                        pairs: 1,
                        max_rel_err: err,
                        pass,
                        witness: (!pass).then(|| Witness {
                            change: format!("flow of {name}"),
                            point: Some(u.clone()),
                            component: Vec::new(),
                            predicted: 4.0,
                            native: r.unwrap_or(f64::NAN),
                            error: None,
                        }),
                    });
                }
                Err(e) => {
                    failure = Some(e);
                    break;
                }
            }
        }
        let check_name = format!("prolong.flow_order.{name}");
        out.push(match failure {
            Some(e) => Check::failed(check_name, e),
            None => Check::from_verdict(check_name, v),
        });
    }
    let f = BaseVectorField::catalog("mixed", p, n)?.spatial()[0].clone();
    out.push(cx.dtensor("prolong.total_differential", &TotalDifferential::new(f, p, n)?));
    Ok(out)
}

fn run_suite(setup: &Setup, suite: &str) -> Vec<Check> {
    let run = || -> Result<Vec<Check>> {
        let cx = Ctx::new(setup, suite)?;
        match suite {
            "adapted" => suite_adapted(&cx),
            "connection" => suite_connection(&cx),
            "dtensors" => suite_dtensors(&cx),
            "prolong" => suite_prolong(&cx),
            "sprays" => suite_sprays(&cx),
            other => Err(Error::UnknownCatalog(other.to_string())),
        }
    };
    run().unwrap_or_else(|e| vec![Check::failed(format!("{suite}.setup"), e)])
}

/// Runs one suite, or all of them in name order.
pub fn verify(setup: &Setup, suite: &str) -> Result<Report> {
    let suites: Vec<&str> = match suite {
        "all" => SUITES.to_vec(),
        s if SUITES.contains(&s) => vec![s],
        other => return Err(Error::UnknownCatalog(format!("suite {other}"))),
    };
    let checks = suites.iter().flat_map(|s| run_suite(setup, s)).collect();
    Ok(Report {
        suite: suite.to_string(),
        checks,
    })
}

//! Seeded (change, jet) suites shared by the verification harness and tests.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::domain::{DomainBox, Interval};
use crate::error::Result;
use crate::geometry::Metric;
use crate::jetspace::JetPoint;
use crate::numdiff::catalog::Family;
use crate::numdiff::ChangeMap;

/// Independent generator for a named suite: the stream is derived from the
/// suite name, so adding suites never perturbs existing ones.
pub fn stream(seed: u64, suite: &str) -> ChaCha8Rng {
    // FNV-1a; stable across platforms and releases
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in suite.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(h);
    rng
}

/// `count` catalog changes alternating affine and perturbed families. The
/// catalog maps are globally invertible, so their domain is unbounded.
pub fn catalog_changes<R: Rng + ?Sized>(rng: &mut R, p: usize, n: usize, count: usize) -> Result<Vec<ChangeMap>> {
    (0..count)
        .map(|k| {
            let family = if k % 2 == 0 { Family::Affine } else { Family::Perturbed };
            let name = match family {
                Family::Affine => format!("affine-{k}"),
                Family::Perturbed => format!("perturbed-{k}"),
            };
            family.build(rng, &name, p, n, DomainBox::unbounded(p, n))
        })
        .collect()
}

/// Base box where both metrics are defined (unbounded directions clipped to
/// `[-1, 1]` when sampled).
pub fn metric_box(h: &Metric, phi: &Metric) -> DomainBox {
    DomainBox {
        t: h.domain().to_vec(),
        x: phi.domain().to_vec(),
    }
}

/// Seeded jets with base point in `dom` and jet entries in `[-1, 1]`.
pub fn seeded_jets<R: Rng + ?Sized>(rng: &mut R, dom: &DomainBox, count: usize) -> Vec<JetPoint> {
    let (p, n) = (dom.t.len(), dom.x.len());
    let unit = Interval::new(-1.0, 1.0);
    (0..count)
        .map(|_| {
            let (t, x) = dom.sample(rng);
            let v = DMatrix::from_fn(n, p, |_, _| unit.sample(rng));
            JetPoint::new(t, x, v).expect("sampled jets are finite")
        })
        .collect()
}

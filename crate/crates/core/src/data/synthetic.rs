use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::rng::{self, Purpose};
use crate::tensor::Tensor;

use super::Dataset;

/// Parameters of the synthetic blob dataset.
///
/// Class `c` is a raised-cosine bump of height `separation` centred in cell `c`
/// of a `g × g` grid (`g = ceil(sqrt(classes))`), on a flat background of
/// `(1 - separation) / 2`. Bumps have disjoint support, so at zero noise every
/// pair of classes differs by exactly `separation` at each bump centre.
/// Gaussian pixel noise is added and the result clamped to `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub per_class: usize,
    pub side: usize,
    pub separation: f64,
    pub noise: f64,
    pub seed: u64,
}

const MIN_RADIUS: usize = 2;

fn grid(classes: usize) -> usize {
    (1..).find(|g| g * g >= classes).expect("classes > 0")
}

/// Noise-free template for one class.
pub fn class_template(class: usize, classes: usize, side: usize, separation: f64) -> Result<Vec<f64>> {
    let g = grid(classes);
    let cell = side / g;
    if cell < 2 * MIN_RADIUS + 2 {
        return Err(Error::invalid(format!(
            "image side {side} too small for {classes} class templates (needs at least {})",
            g * (2 * MIN_RADIUS + 2)
        )));
    }
    let radius = (cell / 2 - 1) as f64;
    let (row, col) = (class / g, class % g);
    let cy = (row * cell + cell / 2) as f64;
    let cx = (col * cell + cell / 2) as f64;
    let background = (1.0 - separation) / 2.0;
    let mut out = vec![background; side * side];
    for y in 0..side {
        for x in 0..side {
            let r = ((y as f64 - cy).powi(2) + (x as f64 - cx).powi(2)).sqrt();
            if r < radius {
                let bump = 0.5 * (1.0 + (std::f64::consts::PI * r / radius).cos());
                out[y * side + x] = background + separation * bump;
            }
        }
    }
    Ok(out)
}

/// Generates `per_class` images per class, grouped by class in label order.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    if spec.classes < 2 || spec.per_class == 0 {
        return Err(Error::invalid("need at least 2 classes and 1 image per class"));
    }
    if !(spec.separation > 0.0 && spec.separation <= 1.0) {
        return Err(Error::invalid(format!(
            "separation must be in (0, 1], got {}",
            spec.separation
        )));
    }
    if !(spec.noise >= 0.0 && spec.noise.is_finite()) {
        return Err(Error::invalid(format!("noise must be non-negative, got {}", spec.noise)));
    }
    let templates = (0..spec.classes)
        .map(|c| class_template(c, spec.classes, spec.side, spec.separation))
        .collect::<Result<Vec<_>>>()?;
    let pixels = spec.side * spec.side;
    let n = spec.classes * spec.per_class;
    let mut data = Vec::with_capacity(n * pixels);
    let mut labels = Vec::with_capacity(n);
    let normal = Normal::new(0.0, spec.noise.max(f64::MIN_POSITIVE)).expect("valid sigma");
    for (c, template) in templates.iter().enumerate() {
        let mut rng = rng::stream(spec.seed, Purpose::Synthetic, &[c as u64]);
        for _ in 0..spec.per_class {
            for &t in template {
                let v = if spec.noise > 0.0 {
                    t + normal.sample(&mut rng)
                } else {
                    t
                };
                data.push(v.clamp(0.0, 1.0));
            }
            labels.push(c);
        }
    }
    Dataset::new(
        Tensor::new(vec![n, 1, spec.side, spec.side], data)?,
        labels,
        spec.classes,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> SyntheticSpec {
        SyntheticSpec {
            classes: 2,
            per_class: 200,
            side: 32,
            separation: 0.4,
            noise: 0.3,
            seed: 3,
        }
    }

    #[test]
    fn count_contract() {
        let d = gen_synthetic(&spec()).unwrap();
        assert_eq!(d.len(), 400);
        assert_eq!(d.class_counts(), vec![200, 200]);
        assert!(d.images().data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn noiseless_draws_are_templates() {
        let d = gen_synthetic(&SyntheticSpec { noise: 0.0, per_class: 2, ..spec() }).unwrap();
        assert_eq!(d.image(0), d.image(1));
        let max_gap = d
            .image(0)
            .iter()
            .zip(d.image(2))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max_gap >= 0.4 - 1e-12, "{max_gap}");
    }

    #[test]
    fn many_classes_stay_distinct() {
        let d = gen_synthetic(&SyntheticSpec { classes: 5, noise: 0.0, per_class: 1, ..spec() }).unwrap();
        for a in 0..5 {
            for b in a + 1..5 {
                let gap = d.image(a).iter().zip(d.image(b)).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
                assert!(gap >= 0.4 - 1e-12);
            }
        }
    }

    #[test]
    fn rejects_tiny_side_and_bad_separation() {
        assert!(gen_synthetic(&SyntheticSpec { side: 8, ..spec() }).is_err());
        assert!(gen_synthetic(&SyntheticSpec { separation: 0.0, ..spec() }).is_err());
    }

    #[test]
    fn seed_changes_noise_only() {
        let a = gen_synthetic(&spec()).unwrap();
        let b = gen_synthetic(&SyntheticSpec { seed: 4, ..spec() }).unwrap();
        assert_eq!(a.labels(), b.labels());
        assert_ne!(a.images(), b.images());
        assert_eq!(a, gen_synthetic(&spec()).unwrap());
    }
}

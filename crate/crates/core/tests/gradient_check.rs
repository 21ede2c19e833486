use obftf_core::data::{Dataset, Example, Target};
use obftf_core::model::{gradient, reduced_loss, Layout, ModelParams, Reduction};
use obftf_core::rng::stream;
use rand::Rng;

const H: f64 = 1e-5;
const REL_TOL: f64 = 1e-4;

fn central_difference(
    params: &ModelParams<f64>,
    data: &Dataset<f64>,
    indices: &[usize],
    reduction: Reduction,
    k: usize,
) -> f64 {
    let mut plus = params.clone();
    plus.values_mut()[k] += H;
    let mut minus = params.clone();
    minus.values_mut()[k] -= H;
    let lp = reduced_loss(&plus, data, indices, reduction).unwrap();
    let lm = reduced_loss(&minus, data, indices, reduction).unwrap();
    (lp - lm) / (2.0 * H)
}

fn kink_inside(
    params: &ModelParams<f64>,
    data: &Dataset<f64>,
    indices: &[usize],
    reduction: Reduction,
    k: usize,
) -> bool {
    let at = |delta: f64| {
        let mut p = params.clone();
        p.values_mut()[k] += delta;
        reduced_loss(&p, data, indices, reduction).unwrap()
    };
    let centre = at(0.0);
    let forward = (at(H) - centre) / H;
    let backward = (centre - at(-H)) / H;
    relative_error(forward, backward) > 1e-2 && (forward - backward).abs() > 1e-6
}

fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

fn random_classification(rng: &mut impl Rng, n: usize, dim: usize, classes: usize) -> Dataset<f64> {
    let features = (0..n * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let labels = (0..n).map(|_| rng.random_range(0..classes) as u8).collect();
    Dataset::classification(dim, features, labels, classes).unwrap()
}

#[test]
fn linear_gradient_matches_finite_differences() {
    let mut rng = stream(11);
    for _ in 0..60 {
        let ex: Vec<Example<f64>> = (0..8)
            .map(|_| Example {
                x: vec![rng.random_range(-5.0..5.0)],
                y: Target::Real(rng.random_range(-10.0..10.0)),
            })
            .collect();
        let data = Dataset::from_examples(&ex, None).unwrap();
        let params = ModelParams::linear(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
        let subset: Vec<usize> = (0..8).filter(|_| rng.random_bool(0.6)).collect();
        let subset = if subset.is_empty() { vec![0] } else { subset };
        for reduction in [Reduction::Mean, Reduction::Sum] {
            let g = gradient(&params, &data, &subset, reduction).unwrap();
            for k in 0..2 {
                let fd = central_difference(&params, &data, &subset, reduction, k);
                assert!(relative_error(g[k], fd) < REL_TOL, "k={k} analytic={} fd={fd}", g[k]);
            }
        }
    }
}

#[test]
fn mlp_gradient_matches_finite_differences() {
    let mut rng = stream(12);
    let mut checked = 0;
    for draw in 0..60 {
        let layout = Layout::mlp(6, &[5, 4], 3).unwrap();
        let params = ModelParams::<f64>::init(layout, draw);
        let data = random_classification(&mut rng, 10, 6, 3);
        let subset: Vec<usize> = (0..10).filter(|_| rng.random_bool(0.5)).collect();
        let subset = if subset.is_empty() { vec![3] } else { subset };
        let reduction = if draw % 2 == 0 { Reduction::Mean } else { Reduction::Sum };
        let g = gradient(&params, &data, &subset, reduction).unwrap();
        for _ in 0..4 {
            let k = rng.random_range(0..params.len());
            let fd = central_difference(&params, &data, &subset, reduction, k);
            // A ReLU kink inside the stencil shows up as one-sided slopes that disagree.
            if kink_inside(&params, &data, &subset, reduction, k) {
                continue;
            }
            assert!(
                (g[k] - fd).abs() < 1e-7 || relative_error(g[k], fd) < REL_TOL,
                "draw {draw} k={k}: analytic={} fd={fd}",
                g[k]
            );
            checked += 1;
        }
    }
    assert!(checked >= 200);
}

#[test]
fn sum_reduction_is_size_times_mean() {
    let mut rng = stream(13);
    let params = ModelParams::<f64>::init(Layout::mlp(4, &[6], 5).unwrap(), 9);
    let data = random_classification(&mut rng, 12, 4, 5);
    let subset = [0, 2, 3, 7, 11];
    let mean = gradient(&params, &data, &subset, Reduction::Mean).unwrap();
    let sum = gradient(&params, &data, &subset, Reduction::Sum).unwrap();
    for (m, s) in mean.iter().zip(&sum) {
        assert!((m * subset.len() as f64 - s).abs() <= 1e-12 * s.abs().max(1.0));
    }
}

#[test]
fn gradient_of_a_union_is_the_sum_of_parts() {
    let mut rng = stream(14);
    let params = ModelParams::<f64>::init(Layout::mlp(3, &[4], 4).unwrap(), 2);
    let data = random_classification(&mut rng, 9, 3, 4);
    let whole = gradient(&params, &data, &[0, 1, 2, 3, 4], Reduction::Sum).unwrap();
    let a = gradient(&params, &data, &[0, 1], Reduction::Sum).unwrap();
    let b = gradient(&params, &data, &[2, 3, 4], Reduction::Sum).unwrap();
    for i in 0..whole.len() {
        assert!((whole[i] - a[i] - b[i]).abs() < 1e-12);
    }
}

#[test]
fn f32_gradient_tracks_f64() {
    let mut rng = stream(15);
    let layout = Layout::mlp(5, &[4], 3).unwrap();
    let p64 = ModelParams::<f64>::init(layout.clone(), 4);
    let p32 = ModelParams::<f32>::from_values(layout, p64.values().iter().map(|&v| v as f32).collect()).unwrap();
    let d64 = random_classification(&mut rng, 6, 5, 3);
    let d32 = Dataset::<f32>::classification(
        5,
        d64.features().iter().map(|&v| v as f32).collect(),
        (0..6).map(|i| match d64.target(i) {
            Target::Class(c) => c,
            Target::Real(_) => unreachable!(),
        })
        .collect(),
        3,
    )
    .unwrap();
    let all: Vec<usize> = (0..6).collect();
    let g64 = gradient(&p64, &d64, &all, Reduction::Mean).unwrap();
    let g32 = gradient(&p32, &d32, &all, Reduction::Mean).unwrap();
    for (a, b) in g64.iter().zip(&g32) {
        assert!((a - *b as f64).abs() < 1e-5);
    }
}

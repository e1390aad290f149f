//! Property tests for the invariants of each module.

mod common;

use proptest::prelude::*;
use specbound::bounds::{
    complexity_kernel, farnia_bound, kl_term, lp_correction, resnet_complexity, spectral_complexity,
};
use specbound::data::{gen_blobs, Dataset, Sample};
use specbound::io;
use specbound::linalg::{norm2, spectral_norm, sub};
use specbound::margin::{
    exact_linear_margin, grid_candidates, losses_from_margins, margin_input_lipschitz, pgd_minimize_margin,
    sample_margins, GridParams, Objective,
};
use specbound::network::LayerPerturbation;
use specbound::rng;
use specbound::verify::{
    layer_recursion_profile, random_lemma_perturbation, random_network, verify_margin_perturbation, NetShape,
    SuiteSummary, TrialReport,
};
use specbound::{generalization_bound, AttackSpec, BoundInputs, Matrix, Network, NetworkKind, NormOrder, TheoremTag};

use common::{forward_oracle, frobenius_oracle, rel_err, spectral_norm_oracle};

fn matrix(max_dim: usize) -> impl Strategy<Value = Matrix> {
    (1..=max_dim, 1..=max_dim).prop_flat_map(|(r, c)| {
        prop::collection::vec(-10.0f64..10.0, r * c).prop_map(move |data| Matrix::new(r, c, data).unwrap())
    })
}

fn shape(resnet_rate: f64) -> NetShape {
    NetShape { max_depth: 4, max_width: 8, max_input: 6, resnet_rate }
}

fn net_from_seed(seed: u64, resnet_rate: f64) -> Network {
    random_network(&mut rng::stream(seed, "prop-net", &[]), shape(resnet_rate))
}

fn input(seed: u64, n: usize) -> Vec<f64> {
    rng::normal_vec(&mut rng::stream(seed, "prop-x", &[]), n)
}

/// Rescale each layer by `α_i` with `∏ α_i = 1`.
fn rescaled(net: &Network, seed: u64) -> Network {
    let mut r = rng::stream(seed, "prop-alpha", &[]);
    let d = net.depth();
    let logs: Vec<f64> = (0..d).map(|_| 2.0 * rng::normal(&mut r)).collect();
    let mean = logs.iter().sum::<f64>() / d as f64;
    let layers = net
        .layers()
        .iter()
        .zip(&logs)
        .map(|(w, l)| w.scale((l - mean).exp()))
        .collect();
    Network::new(net.kind(), layers).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn spectral_below_frobenius(w in matrix(6)) {
        let s = w.spectral_norm().unwrap();
        let f = w.frobenius_norm();
        prop_assert!(s <= f * (1.0 + 1e-12));
        let rank_bound = (w.rows().min(w.cols()) as f64).sqrt() * s;
        prop_assert!(f <= rank_bound * (1.0 + 1e-12));
        prop_assert!(rel_err(f, frobenius_oracle(&w)) <= 1e-14 || f == 0.0);
    }
}

proptest! {
    #[test]
    fn spectral_homogeneous(w in matrix(6), c in -100.0f64..100.0) {
        let s = w.spectral_norm().unwrap();
        let sc = w.scale(c).spectral_norm().unwrap();
        prop_assert!((sc - c.abs() * s).abs() <= 1e-10 * c.abs() * s + 1e-300);
    }

    #[test]
    fn spectral_transpose(w in matrix(6)) {
        let s = w.spectral_norm().unwrap();
        let t = w.transpose().spectral_norm().unwrap();
        prop_assert!((s - t).abs() <= 1e-10 * s);
    }

    #[test]
    fn spectral_matches_charpoly(w in matrix(3)) {
        let s = w.spectral_norm().unwrap();
        let o = spectral_norm_oracle(&w);
        prop_assert!((s - o).abs() <= 1e-8 * o.max(1e-300), "{} vs {}", s, o);
    }

    #[test]
    fn spectral_dominates_every_direction(w in matrix(6), seed in any::<u64>()) {
        let v = rng::normal_vec(&mut rng::stream(seed, "dir", &[]), w.cols());
        let s = spectral_norm(&w, 1e-10, 1000).unwrap();
        prop_assert!(norm2(&w.matvec(&v)) <= s * norm2(&v) * (1.0 + 1e-9));
    }

    #[test]
    fn forward_matches_oracle(seed in any::<u64>()) {
        let net = net_from_seed(seed, 0.5);
        let x = input(seed, net.input_dim());
        let got = net.forward(&x).unwrap();
        let want = forward_oracle(net.layers(), net.kind() == NetworkKind::Resnet, &x);
        for (a, b) in got.iter().zip(&want) {
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
        prop_assert_eq!(net.layer_output(&x, net.depth()).unwrap(), got);
    }

    #[test]
    fn layer_output_norm_bound(seed in any::<u64>()) {
        let net = net_from_seed(seed, 0.5);
        let x = input(seed, net.input_dim());
        let offset = if net.kind() == NetworkKind::Resnet { 1.0 } else { 0.0 };
        let mut product = 1.0;
        for (i, out) in net.layer_outputs(&x).unwrap().iter().enumerate() {
            product *= net.layers()[i].spectral_norm().unwrap() + offset;
            prop_assert!(norm2(out) <= norm2(&x) * product * (1.0 + 1e-9));
        }
    }

    #[test]
    fn positive_homogeneity_in_input(seed in any::<u64>(), c in 0.01f64..100.0) {
        let net = net_from_seed(seed, 0.0);
        let x = input(seed, net.input_dim());
        let cx: Vec<f64> = x.iter().map(|v| v * c).collect();
        let a = net.forward(&cx).unwrap();
        let b = net.forward(&x).unwrap();
        for (u, v) in a.iter().zip(&b) {
            prop_assert!((u - c * v).abs() <= 1e-10 * (1.0 + (c * v).abs()));
        }
    }

    #[test]
    fn beta_normalization_preserves_function_and_phi(seed in any::<u64>()) {
        let net = net_from_seed(seed, 0.0);
        let norm = net.beta_normalize().unwrap();
        let x = input(seed, net.input_dim());
        let a = norm.forward(&x).unwrap();
        let b = net.forward(&x).unwrap();
        prop_assert!(norm2(&sub(&a, &b)) <= 1e-9 * (1.0 + norm2(&b)));
        let (p, q) = (spectral_complexity(&net).unwrap(), spectral_complexity(&norm).unwrap());
        prop_assert!(rel_err(q, p) <= 1e-9);
        let spectral: Vec<f64> = norm.layer_norms().unwrap().iter().map(|l| l.spectral).collect();
        for s in &spectral {
            prop_assert!(rel_err(*s, spectral[0]) <= 1e-9);
        }
    }

    #[test]
    fn bounds_invariant_under_layer_rescaling(seed in any::<u64>(), eps in 0.0f64..1.0) {
        let net = net_from_seed(seed, 0.0);
        let moved = rescaled(&net, seed);
        let mut inputs = BoundInputs::new(2.0, eps, 0.5, 0.05, 500, net.input_dim());
        inputs.kappa = Some(1.0);
        for mode in [TheoremTag::Standard, TheoremTag::Robust] {
            let a = generalization_bound(&net, &inputs, mode).unwrap().bound_value;
            let b = generalization_bound(&moved, &inputs, mode).unwrap().bound_value;
            prop_assert!(rel_err(b, a) <= 1e-9, "{:?}: {} vs {}", mode, a, b);
        }
    }

    #[test]
    fn farnia_dominates_robust(seed in any::<u64>(), eps in 0.0f64..1.0, log_kappa in -6.0f64..6.0) {
        let net = net_from_seed(seed, 0.0);
        let mut inputs = BoundInputs::new(1.0, eps, 1.0, 0.05, 1000, net.input_dim());
        inputs.kappa = Some(10f64.powf(log_kappa));
        let robust = generalization_bound(&net, &inputs, TheoremTag::Robust).unwrap();
        let f = farnia_bound(&net, &inputs).unwrap();
        prop_assert!(f.bound_value >= robust.bound_value);
        prop_assert!(f.c_fgm.unwrap() >= 0.0);
    }

    #[test]
    fn kl_scales_with_inverse_gamma_squared(seed in any::<u64>(), gamma in 0.01f64..10.0) {
        let net = net_from_seed(seed, 0.0);
        let one = BoundInputs::new(1.0, 0.0, gamma, 0.05, 1000, net.input_dim());
        let two = BoundInputs { gamma: 2.0 * gamma, ..one };
        let a = generalization_bound(&net, &one, TheoremTag::Standard).unwrap();
        let b = generalization_bound(&net, &two, TheoremTag::Standard).unwrap();
        prop_assert!(rel_err(b.kl_upper, a.kl_upper / 4.0) <= 1e-12);
        prop_assert!(rel_err(kl_term(&net.beta_normalize().unwrap(), a.sigma).unwrap(), a.kl_upper) <= 1e-12);
    }

    #[test]
    fn resnet_kernel_reduces_to_phi(seed in any::<u64>()) {
        let net = net_from_seed(seed, 1.0);
        let norms = net.layer_norms().unwrap();
        prop_assert_eq!(complexity_kernel(&norms, 0.0).unwrap(), spectral_complexity(&net).unwrap());
        prop_assert_eq!(complexity_kernel(&norms, 1.0).unwrap(), resnet_complexity(&net).unwrap());
        prop_assert!(resnet_complexity(&net).unwrap() >= 0.0);
    }

    #[test]
    fn robust_bound_monotone_in_eps(seed in any::<u64>(), e1 in 0.0f64..1.0, e2 in 0.0f64..1.0) {
        let net = net_from_seed(seed, 0.0);
        let (lo, hi) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
        let b = |e| generalization_bound(&net, &BoundInputs::new(1.0, e, 1.0, 0.05, 1000, net.input_dim()), TheoremTag::Robust)
            .unwrap()
            .bound_value;
        prop_assert!(b(lo) <= b(hi));
    }

    #[test]
    fn lp_correction_at_least_one(n in 1usize..1000) {
        for p in [NormOrder::L1, NormOrder::L2, NormOrder::Inf] {
            prop_assert!(lp_correction(n, p) >= 1.0);
        }
        prop_assert!((lp_correction(n, NormOrder::Inf) - (n as f64).sqrt()).abs() <= 1e-12 * (n as f64).sqrt());
    }

    #[test]
    fn projection_lands_in_ball(seed in any::<u64>(), eps in 0.0f64..3.0, n in 1usize..8) {
        let mut r = rng::stream(seed, "proj", &[]);
        let center = rng::normal_vec(&mut r, n);
        let point: Vec<f64> = rng::normal_vec(&mut r, n).iter().map(|v| 4.0 * v).collect();
        for p in [NormOrder::L1, NormOrder::L2, NormOrder::Inf] {
            let q = p.project(&center, eps, &point);
            prop_assert!(p.norm(&sub(&q, &center)) <= eps * (1.0 + 1e-12) + 1e-15);
            let again = p.project(&center, eps, &q);
            for (a, b) in again.iter().zip(&q) {
                prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
            }
        }
    }

    #[test]
    fn pgd_is_feasible_and_below_clean(seed in any::<u64>(), eps in 0.0f64..1.0) {
        let net = net_from_seed(seed, 0.3);
        let x = input(seed, net.input_dim());
        for p in [NormOrder::L1, NormOrder::L2, NormOrder::Inf] {
            let spec = AttackSpec::training(p, eps).with_seed(seed);
            let r = pgd_minimize_margin(&net, &x, Objective::Label(0), &spec).unwrap();
            prop_assert!(p.norm(&sub(&r.witness, &x)) <= eps * (1.0 + 1e-12) + 1e-15);
            let clean = Objective::Label(0).evaluate(&net.forward(&x).unwrap()).unwrap();
            prop_assert!(r.value <= clean);
            prop_assert_eq!(r.value, Objective::Label(0).evaluate(&net.forward(&r.witness).unwrap()).unwrap());
        }
    }

    #[test]
    fn pgd_nonincreasing_in_steps(seed in any::<u64>(), eps in 0.01f64..1.0, steps in 1usize..30) {
        let net = net_from_seed(seed, 0.0);
        let x = input(seed, net.input_dim());
        let base = AttackSpec::new(NormOrder::L2, eps).with_seed(seed);
        let short = AttackSpec { steps, ..base };
        let long = AttackSpec { steps: steps + 5, ..base };
        let a = pgd_minimize_margin(&net, &x, Objective::Label(0), &short).unwrap().value;
        let b = pgd_minimize_margin(&net, &x, Objective::Label(0), &long).unwrap().value;
        prop_assert!(b <= a);
    }

    #[test]
    fn exact_linear_matches_brute_force(seed in any::<u64>(), eps in 0.0f64..0.5) {
        let mut r = rng::stream(seed, "lin", &[]);
        let n = 1 + (seed % 3) as usize;
        let w = Matrix::gaussian(3, n, 1.0, &mut r);
        let net = Network::feedforward(vec![w]).unwrap();
        let x = rng::normal_vec(&mut r, n);
        let obj = Objective::Pair(0, 2);
        let exact = exact_linear_margin(&net, &x, obj, NormOrder::L2, eps).unwrap().value;
        let params = GridParams { resolution: 41, extra_samples: 32, seed };
        let grid_min = grid_candidates(&x, eps, params).unwrap()
            .iter()
            .map(|p| obj.evaluate(&net.forward(p).unwrap()).unwrap())
            .fold(f64::INFINITY, f64::min);
        let slack = margin_input_lipschitz(&net).unwrap() * specbound::margin::grid_covering_radius(n, eps, 41);
        prop_assert!(exact <= grid_min + 1e-12);
        prop_assert!(grid_min <= exact + slack + 1e-12);
    }

    #[test]
    fn robust_loss_dominates_clean_loss(seed in any::<u64>(), eps in 0.0f64..0.5, g1 in 0.0f64..2.0, g2 in 0.0f64..2.0) {
        let data = gen_blobs(3, 2, 30, 1.0, 2.0, seed).unwrap();
        let net = random_network(&mut rng::stream(seed, "net", &[]), NetShape { max_depth: 2, max_width: 6, max_input: 1, resnet_rate: 0.0 });
        let net = if net.input_dim() == 2 && net.output_dim() >= 3 { net } else {
            Network::he_init(&[2, 5, 3], &mut rng::stream(seed, "he", &[])).unwrap()
        };
        let spec = AttackSpec::training(NormOrder::L2, eps).with_seed(seed);
        let margins = sample_margins(&net, &data, Some(&spec)).unwrap();
        for m in &margins {
            prop_assert!(m.robust.unwrap() <= m.clean);
        }
        let (lo, hi) = if g1 <= g2 { (g1, g2) } else { (g2, g1) };
        let a = losses_from_margins(&margins, lo);
        let b = losses_from_margins(&margins, hi);
        prop_assert!(a.robust_loss.unwrap() >= a.clean_loss);
        prop_assert!(a.clean_loss <= b.clean_loss);
    }

    #[test]
    fn margin_check_scales_with_input(seed in any::<u64>(), c in 0.1f64..10.0) {
        let net = net_from_seed(seed, 0.3);
        let x = input(seed, net.input_dim());
        let u = random_lemma_perturbation(&net, &mut rng::stream(seed, "u", &[])).unwrap();
        let b = norm2(&x);
        let k = net.output_dim();
        let (i, j) = ((seed % k as u64) as usize, ((seed / 7) % k as u64) as usize);
        let base = verify_margin_perturbation(&net, &x, &u, i, j, b).unwrap();
        let cx: Vec<f64> = x.iter().map(|v| v * c).collect();
        let scaled = verify_margin_perturbation(&net, &cx, &u, i, j, norm2(&cx).max(c * b)).unwrap();
        prop_assert!((scaled.measured_gap - c * base.measured_gap).abs() <= 1e-10 * (c * base.measured_gap).max(1e-300) + 1e-13);
        prop_assert!(rel_err(scaled.bound_value, c * base.bound_value) <= 1e-10);
        prop_assert!(base.pass && scaled.pass);
    }

    #[test]
    fn recursion_bounds_nondecreasing_when_norms_at_least_one(seed in any::<u64>()) {
        let net = net_from_seed(seed, 0.0);
        // rescale every layer to spectral norm >= 1
        let layers: Vec<Matrix> = net.layers().iter().map(|w| {
            let s = w.spectral_norm().unwrap();
            if s < 1.0 { w.scale(1.0 / s) } else { w.clone() }
        }).collect();
        let net = Network::feedforward(layers).unwrap();
        let x = input(seed, net.input_dim());
        let u = random_lemma_perturbation(&net, &mut rng::stream(seed, "u", &[])).unwrap();
        let profile = layer_recursion_profile(&net, &x, &u).unwrap();
        for w in profile.windows(2) {
            prop_assert!(w[1].1 >= w[0].1 * (1.0 - 1e-12));
        }
        for (gap, bound) in profile {
            prop_assert!(gap <= bound + 1e-12);
        }
    }

    #[test]
    fn summary_accounting(raw in prop::collection::vec((0.0f64..2.0, 0.0f64..2.0, 0.0f64..0.5), 1..50)) {
        let reports: Vec<TrialReport> = raw.iter().enumerate()
            .map(|(i, &(m, b, o))| TrialReport::new(i as u64, m, b, o))
            .collect();
        let s = SuiteSummary::from_trials("p", &reports);
        prop_assert_eq!(s.violations, reports.iter().filter(|r| !r.pass).count());
        prop_assert_eq!(s.histogram.iter().sum::<usize>(), reports.len());
        if s.passed() {
            let floor = reports
                .iter()
                .filter(|r| r.measured_gap > 0.0)
                .map(|r| 1.0 - (r.oracle_error_bound + 1e-12) / r.measured_gap)
                .fold(f64::INFINITY, f64::min);
            prop_assert!(s.min_slack >= floor - 1e-12);
        }
    }

    #[test]
    fn network_round_trip_bit_exact(seed in any::<u64>(), raw in prop::collection::vec(any::<f64>(), 6)) {
        let data: Vec<f64> = raw.into_iter().map(|v| if v.is_finite() { v } else { 0.5 }).collect();
        let mut layers = random_network(&mut rng::stream(seed, "rt", &[]), shape(0.5)).layers().to_vec();
        layers.push(Matrix::new(6, layers.last().unwrap().rows(), vec![0.0; 6 * layers.last().unwrap().rows()]).unwrap());
        layers.push(Matrix::new(1, 6, data).unwrap());
        let net = Network::feedforward(layers).unwrap();
        let back = io::network_from_str(&io::network_to_string(&net), "mem").unwrap();
        let bits = |n: &Network| n.layers().iter().flat_map(|w| w.data().iter().map(|v| v.to_bits())).collect::<Vec<u64>>();
        prop_assert_eq!(bits(&net), bits(&back));
    }

    #[test]
    fn dataset_round_trip_and_norm_bound(seed in any::<u64>(), k in 2usize..5, n in 1usize..5) {
        let data = gen_blobs(k, n, 3 * k, 0.5, 4.0, seed).unwrap();
        prop_assert!(data.samples().iter().all(|s| norm2(&s.x) <= data.b()));
        let back = io::dataset_from_str(&io::dataset_to_string(&data), "mem").unwrap();
        prop_assert_eq!(&back, &data);
        prop_assert_eq!(gen_blobs(k, n, 3 * k, 0.5, 4.0, seed).unwrap(), data);
    }

    #[test]
    fn dataset_rejects_out_of_ball(x in prop::collection::vec(-5.0f64..5.0, 3), b in 0.1f64..5.0) {
        let ok = norm2(&x) <= b;
        let built = Dataset::new(vec![Sample { x, y: 0 }], 3, 2, b);
        prop_assert_eq!(built.is_ok(), ok);
    }

    #[test]
    fn zero_perturbation_changes_nothing(seed in any::<u64>()) {
        let net = net_from_seed(seed, 0.5);
        let zero = LayerPerturbation::zeros_like(&net);
        prop_assert_eq!(net.perturb(&zero).unwrap(), net);
    }
}

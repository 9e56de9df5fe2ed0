use cnext::compress::{
    compress_vector, contract_samples, verify_contract, CompressState, CompressionScheme,
};
use cnext::data::{build_objective, generate_ridge_synthetic, partition_homogeneous};
use cnext::graph::{
    build_circulant_expander, build_ring, metropolis_hastings_weights, Network, Topology,
};
use cnext::objective::ObjectiveKind;
use cnext::rng::{agent_streams, substream, Stream};
use cnext::solver::{step, HyperParams, Mode, Problem, SolverState};
use cnext::theory::{assemble_a, ProblemConstants, TauChoice, TheoryConstants, Theta};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;

/// Spectrum of a symmetric circulant matrix with first-row entries
/// `c[0], c[±s] = c[s]`.
fn circulant_spectrum(n: usize, diag: f64, offsets: &[(usize, f64)]) -> Vec<f64> {
    (0..n)
        .map(|k| {
            let th = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
            diag + offsets
                .iter()
                .map(|&(s, w)| 2.0 * w * (th * s as f64).cos())
                .sum::<f64>()
        })
        .collect()
}

#[test]
fn ring_ten_spectral_constants() {
    let net = metropolis_hastings_weights(&build_ring(10).unwrap()).unwrap();
    let eig = circulant_spectrum(10, 1.0 / 3.0, &[(1, 1.0 / 3.0)]);
    let rho = eig[1..].iter().map(|v| v.abs()).fold(0.0, f64::max);
    let beta = eig.iter().map(|v| (1.0 - v).abs()).fold(0.0, f64::max);
    assert!((net.rho() - rho).abs() < 1e-12);
    assert!((net.rho() - 0.87268).abs() < 1e-5);
    assert!((net.beta() - beta).abs() < 1e-12);
    assert!((net.beta() - 4.0 / 3.0).abs() < 1e-12);
}

#[test]
fn expander_fourteen_spectral_constants() {
    let net = metropolis_hastings_weights(&build_circulant_expander(14, 6).unwrap()).unwrap();
    let w = 1.0 / 7.0;
    let eig = circulant_spectrum(14, w, &[(1, w), (2, w), (3, w)]);
    let rho = eig[1..].iter().map(|v| v.abs()).fold(0.0, f64::max);
    assert!((net.rho() - rho).abs() < 1e-12);
    assert!((net.rho() - 0.6420).abs() < 1e-4, "{}", net.rho());
}

#[test]
fn randomk_contract_constant_by_monte_carlo() {
    let probes = contract_samples(20, 16, 3);
    let mut rng = substream(3, Stream::Aux(9), 0);
    let c = verify_contract(&CompressionScheme::RandomK { k: 5 }, &probes, 5000, &mut rng).unwrap();
    assert!((c - 0.75).abs() < 0.02, "{c}");
}

#[test]
fn dithered_quantizer_is_unbiased() {
    let x = contract_samples(8, 2, 11).pop().unwrap();
    let mut rng = substream(11, Stream::Aux(9), 0);
    let q = CompressionScheme::Quantize { bits: 2 };
    let draws = 50_000;
    let (mut s, mut s2) = (vec![0.0; 8], vec![0.0; 8]);
    for _ in 0..draws {
        let (v, _) = compress_vector(&q, &x, &mut rng).unwrap();
        for j in 0..8 {
            s[j] += v[j];
            s2[j] += v[j] * v[j];
        }
    }
    for j in 0..8 {
        let m = s[j] / draws as f64;
        let se = ((s2[j] / draws as f64 - m * m).max(0.0) / draws as f64).sqrt();
        assert!((m - x[j]).abs() <= 4.0 * se + 1e-12, "coord {j}: {m} vs {}", x[j]);
    }
}

fn ring_problem(n: usize, p: usize, seed: u64) -> Problem {
    let ds = generate_ridge_synthetic(20 * n, p, seed).unwrap();
    let part = partition_homogeneous(&ds, n, seed).unwrap();
    let obj = build_objective(&ds, &part, ObjectiveKind::Ridge, 0.5).unwrap();
    let net = metropolis_hastings_weights(&build_ring(n).unwrap()).unwrap();
    Problem::new(obj, net).unwrap()
}

fn scheme_strategy(p: usize) -> impl Strategy<Value = CompressionScheme> {
    prop_oneof![
        Just(CompressionScheme::Identity),
        (1u32..4).prop_map(|bits| CompressionScheme::Quantize { bits }),
        (1..=p).prop_map(|k| CompressionScheme::RandomK { k }),
        (1..=p).prop_map(|k| CompressionScheme::TopK { k }),
        Just(CompressionScheme::NormSign),
    ]
}

/// Ring plus random chords.
fn random_network(n: usize, chords: &[(usize, usize)]) -> Network {
    let mut adj = vec![vec![false; n]; n];
    for i in 0..n {
        adj[i][i] = true;
        adj[i][(i + 1) % n] = true;
        adj[(i + 1) % n][i] = true;
    }
    for &(a, b) in chords {
        let (a, b) = (a % n, b % n);
        adj[a][b] = true;
        adj[b][a] = true;
    }
    metropolis_hastings_weights(&Topology::custom(&adj).unwrap()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn weights_are_symmetric_doubly_stochastic(
        n in 3usize..12,
        chords in prop::collection::vec((0usize..12, 0usize..12), 0..8),
    ) {
        let net = random_network(n, &chords);
        let w = net.weights();
        for i in 0..n {
            prop_assert!((w.row(i).sum() - 1.0).abs() < 1e-12);
            prop_assert!((w.column(i).sum() - 1.0).abs() < 1e-12);
            for j in 0..n {
                prop_assert!(w[(i, j)] >= 0.0);
                prop_assert!((w[(i, j)] - w[(j, i)]).abs() < 1e-15);
            }
        }
        prop_assert!(net.rho() < 1.0);
        prop_assert!(net.beta() <= 2.0 + 1e-12);
    }

    #[test]
    fn weighted_memory_tracks_mixed_memory(
        scheme in scheme_strategy(4),
        alpha in 0.05f64..1.0,
        seed in any::<u64>(),
        rounds in 1usize..40,
    ) {
        let net = random_network(6, &[(0, 3)]);
        let mut rng = substream(seed, Stream::Aux(10), 0);
        let mut draw = |rng: &mut rand_chacha::ChaCha8Rng| {
            DMatrix::from_fn(6, 4, |_, _| rng.random::<f64>() * 10.0 - 5.0)
        };
        let mut ch = CompressState::new(draw(&mut rng), &net, alpha).unwrap();
        let mut rngs = agent_streams(seed, Stream::Decision, 6);
        for _ in 0..rounds {
            let z = draw(&mut rng);
            let r = ch.compress_round(&z, &scheme, &net, &mut rngs).unwrap();
            let mixed = net.mix(&r.estimate);
            prop_assert!((&r.weighted - &mixed).amax() <= 1e-10 * mixed.amax().max(1.0));
            let mixed_h = net.mix(ch.memory());
            prop_assert!((ch.weighted_memory() - &mixed_h).amax() <= 1e-10 * mixed_h.amax().max(1.0));
        }
    }

    #[test]
    fn tracker_average_equals_gradient_average(
        scheme in scheme_strategy(3),
        eta in 1e-3f64..0.1,
        gamma in 0.05f64..1.0,
        alpha in 0.05f64..1.0,
        mode in prop_oneof![Just(Mode::Cnext), Just(Mode::FirstOrderGt), Just(Mode::UncompressedGiant)],
        seed in any::<u64>(),
    ) {
        let problem = ring_problem(4, 3, 5);
        let hp = HyperParams { eta, gamma, alpha_x: alpha, alpha_y: alpha, iterations: 30, tol: 0.0 };
        let mut state = SolverState::init(&problem, &hp, seed).unwrap();
        for _ in 0..hp.iterations {
            if step(&mut state, &problem, &scheme, &hp, mode).is_err() {
                break;
            }
            let scale = state.gradients().amax().max(state.y().amax()).max(1.0);
            prop_assert!(state.tracking_gap() <= 1e-10 * scale);
        }
    }

    #[test]
    fn contraction_matrix_is_nonnegative_below_the_cap(
        mu in 0.1f64..10.0,
        kappa in 1.0f64..100.0,
        rho in 0.0f64..0.99,
        beta in 0.0f64..2.0,
        n in 1usize..30,
        c in 0.0f64..1.0,
        delta in 0.05f64..1.0,
        gamma in 1e-3f64..1.0,
        eta_frac in 1e-6f64..1.0,
    ) {
        let pc = ProblemConstants { mu, l: mu * kappa, rho, beta, n };
        let sc = cnext::compress::SchemeConstants { c, r: 1.0, delta, measured: false };
        let cap = (2.0 * kappa / 3.0).min(1.0 / kappa);
        let theta = Theta { eta: eta_frac * cap, gamma, alpha_x: 1.0, alpha_y: 1.0 };
        let tc = TheoryConstants::new(&pc, &sc, &theta, TauChoice::default()).unwrap();
        let a = assemble_a(&tc, &theta);
        prop_assert!(a.min_entry() >= 0.0, "{:?}", a.entries);
    }

    #[test]
    fn sparsifiers_keep_at_most_k(
        x in prop::collection::vec(-10.0f64..10.0, 1..30),
        k_frac in 0.0f64..1.0,
        seed in any::<u64>(),
    ) {
        let p = x.len();
        let k = 1 + ((p - 1) as f64 * k_frac) as usize;
        let mut rng = substream(seed, Stream::Aux(10), 0);
        let (top, _) = compress_vector(&CompressionScheme::TopK { k }, &x, &mut rng).unwrap();
        let kept = top.iter().filter(|v| **v != 0.0).count();
        prop_assert!(kept <= k);
        for (a, b) in top.iter().zip(&x) {
            prop_assert!(*a == 0.0 || a == b);
        }
        let (rand_k, _) = compress_vector(&CompressionScheme::RandomK { k }, &x, &mut rng).unwrap();
        for (a, b) in rand_k.iter().zip(&x) {
            prop_assert!(*a == 0.0 || a == b);
        }
        let (ns, _) = compress_vector(&CompressionScheme::NormSign, &x, &mut rng).unwrap();
        let inf = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (a, b) in ns.iter().zip(&x) {
            prop_assert!(a.abs() == inf || *b == 0.0);
        }
    }
}

//! GP posterior oracles: the low-rank spectral implementation against dense
//! textbook formulas on random graph instances, and noiseless interpolation.

use graphbo::embedding::{SpectralEigenpairs, NULL_TOL, ZERO_ROW_TOL};
use graphbo::gp::{GpSurrogate, SpectralFilter, SpectralKernel};
use graphbo::graph::{power_law_generate, rdpg_generate, sbm_generate, Graph};
use graphbo::linalg;
use graphbo::rng;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

/// Eigenpairs of the dense normalized Laplacian of a real graph, cleaned the
/// way the learned pipeline cleans them: null directions dropped, ascending
/// eigenvalues, row-normalized `phis` over the kept columns.
fn laplacian_eigenpairs(g: &Graph, k: usize) -> SpectralEigenpairs {
    let n = g.n();
    let a = g.adjacency();
    let deg: Vec<f64> = (0..n).map(|u| g.degree(u).max(1e-6)).collect();
    let mut l = DMatrix::zeros(n, n);
    for u in 0..n {
        for v in 0..n {
            l[(u, v)] = -a[(u, v)] / (deg[u] * deg[v]).sqrt();
        }
        l[(u, u)] += 1.0;
    }
    let eig = linalg::sym_eigen(&l);
    let kept: Vec<usize> = (0..n).filter(|&i| eig.values[i] >= NULL_TOL).collect();
    let kept = &kept[..k.min(kept.len())];
    let mut f_basis = DMatrix::zeros(n, kept.len());
    let mut lambdas = Vec::with_capacity(kept.len());
    for (dst, &src) in kept.iter().enumerate() {
        f_basis.column_mut(dst).copy_from(&eig.vectors.column(src));
        lambdas.push(eig.values[src].max(0.0));
    }
    let mut phis = f_basis.clone();
    let mut zero_rows = Vec::new();
    for u in 0..n {
        let norm = phis.row(u).norm();
        if norm < ZERO_ROW_TOL {
            phis.row_mut(u).fill(0.0);
            zero_rows.push(u);
        } else {
            phis.row_mut(u).iter_mut().for_each(|x| *x /= norm);
        }
    }
    SpectralEigenpairs {
        lambdas,
        phis,
        f_basis,
        zero_rows,
    }
}

fn equal_blocks(n: usize, blocks: usize) -> Vec<usize> {
    let mut sizes = vec![n / blocks; blocks];
    for s in sizes.iter_mut().take(n % blocks) {
        *s += 1;
    }
    sizes
}

fn random_graph(idx: usize, n: usize) -> Graph {
    let seed = 1000 + idx as u64;
    match idx % 3 {
        0 => sbm_generate(&equal_blocks(n, 3), 0.7, 0.15, seed).unwrap(),
        1 => rdpg_generate(n, 4, seed).unwrap(),
        _ => power_law_generate(n, 3, seed).unwrap(),
    }
}

fn random_filter(idx: usize) -> SpectralFilter {
    match idx % 3 {
        0 => SpectralFilter::Polynomial {
            betas: vec![1.0, -0.4, 0.05],
        },
        1 => SpectralFilter::Matern { beta: 0.8, nu: 1.5 },
        _ => SpectralFilter::Rbf {
            sigma_f: 1.2,
            lengthscale: 0.9,
        },
    }
}

struct Instance {
    kern: SpectralKernel,
    train: Vec<usize>,
    y: Vec<f64>,
}

/// Greedy design from a random start: each step adds the node that maximizes
/// the smallest eigenvalue of the resulting training Gram. Structurally
/// equivalent nodes (same SBM block, say) carry near-identical kernel rows,
/// and a training set containing such a pair has no numerically well-posed
/// noiseless interpolant; this keeps the Gram comfortably invertible.
fn well_posed_train_nodes<R: Rng>(kern: &SpectralKernel, m: usize, r: &mut R) -> Vec<usize> {
    let n = kern.eigenpairs.n();
    let mut chosen = vec![r.gen_range(0..n)];
    while chosen.len() < m {
        let next = (0..n)
            .filter(|u| !chosen.contains(u))
            .max_by(|&a, &b| {
                let lam = |u: usize| {
                    let mut cand = chosen.clone();
                    cand.push(u);
                    let eig = linalg::sym_eigen(&kern.gram(&cand));
                    eig.values[0]
                };
                lam(a).partial_cmp(&lam(b)).unwrap()
            })
            .unwrap();
        chosen.push(next);
    }
    chosen
}

/// One random GP regression instance: random graph family, filter family,
/// training subset, and targets. `m_max` bounds the training-set size.
fn random_instance(idx: usize, m_max: usize) -> Instance {
    let mut r = rng::from_seed(500 + idx as u64);
    let n = r.gen_range(20..=50usize);
    let g = random_graph(idx, n);
    let k = r.gen_range(6..=10usize);
    let e = laplacian_eigenpairs(&g, k);
    // offset so graph and filter families pair up in all combinations
    let kern = SpectralKernel::new(random_filter(idx + idx / 3), e).unwrap();
    let m = r.gen_range(3..=m_max.min(n));
    let train: Vec<usize> = rand::seq::index::sample(&mut r, n, m).into_vec();
    let y: Vec<f64> = (0..m).map(|_| r.gen_range(-2.0..2.0)).collect();
    Instance { kern, train, y }
}

/// Dense textbook posterior at node `v`, replicating the surrogate's target
/// standardization: `mu = m_y + s_y k*^T Kt^{-1} ys`,
/// `sigma = s_y sqrt(k(v,v) - k*^T Kt^{-1} k*)` with
/// `Kt = K + (noise + jitter) I` inverted explicitly.
fn dense_posterior(inst: &Instance, gp: &GpSurrogate, v: usize) -> (f64, f64) {
    let m = inst.train.len();
    let mf = m as f64;
    let mean = inst.y.iter().sum::<f64>() / mf;
    let var = inst.y.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / mf;
    let std = var.sqrt().max(1e-12);
    let ys = DVector::from_iterator(m, inst.y.iter().map(|t| (t - mean) / std));
    let mut kt = inst.kern.gram(&inst.train);
    for i in 0..m {
        kt[(i, i)] += gp.noise_var + gp.jitter();
    }
    let inv = kt.try_inverse().expect("oracle gram is invertible");
    let ks = DVector::from_fn(m, |a, _| inst.kern.eval(inst.train[a], v));
    let mu = mean + std * (ks.transpose() * &inv * &ys)[(0, 0)];
    let var_std = (inst.kern.eval(v, v) - (ks.transpose() * &inv * &ks)[(0, 0)]).max(0.0);
    (mu, std * var_std.sqrt())
}

#[test]
fn posterior_matches_the_dense_formula_on_20_random_instances() {
    for idx in 0..20 {
        let inst = random_instance(idx, 12);
        let mut r = rng::from_seed(9000 + idx as u64);
        let noise = 10f64.powf(r.gen_range(-3.0..-1.0));
        let gp = GpSurrogate::fit(
            inst.kern.clone(),
            inst.train.clone(),
            &inst.y,
            noise,
            false,
        )
        .unwrap();
        let n = inst.kern.eigenpairs.n();
        for v in 0..n {
            let (mu, sigma) = gp.predict(v);
            let (mu_o, sigma_o) = dense_posterior(&inst, &gp, v);
            assert!(
                (mu - mu_o).abs() <= 1e-8,
                "instance {idx} node {v}: mean {mu} vs dense {mu_o}"
            );
            assert!(
                (sigma - sigma_o).abs() <= 1e-8,
                "instance {idx} node {v}: sigma {sigma} vs dense {sigma_o}"
            );
        }
    }
}

#[test]
fn noiseless_fit_interpolates_training_nodes_on_20_random_instances() {
    for idx in 0..20 {
        // keep m at or below the kernel rank so exact interpolation exists,
        // and spread the design so it is numerically well posed
        let mut inst = random_instance(idx, 6);
        let mut r = rng::from_seed(7700 + idx as u64);
        inst.train = well_posed_train_nodes(&inst.kern, inst.train.len(), &mut r);
        let gp = GpSurrogate::fit(
            inst.kern.clone(),
            inst.train.clone(),
            &inst.y,
            0.0,
            true,
        )
        .unwrap();
        assert_eq!(gp.noise_var, 0.0);
        for (i, &v) in inst.train.iter().enumerate() {
            let (mu, _) = gp.predict(v);
            assert!(
                (mu - inst.y[i]).abs() <= 1e-6,
                "instance {idx} train node {v}: mu {mu} vs y {}",
                inst.y[i]
            );
        }
    }
}

#[test]
fn hyperparameter_descent_does_not_lose_to_the_initialization() {
    // On a handful of instances, fitted nll <= initial nll and the posterior
    // still matches the dense formula at the fitted hyperparameters.
    for idx in [0usize, 4, 8] {
        let inst = random_instance(idx, 10);
        let mut gp = GpSurrogate::fit(
            inst.kern.clone(),
            inst.train.clone(),
            &inst.y,
            0.05,
            false,
        )
        .unwrap();
        let report = gp.fit_hyperparams(1e-2, 40).unwrap();
        assert!(report.final_nll <= report.initial_nll + 1e-12);
        let fitted = Instance {
            kern: gp.kernel.clone(),
            train: inst.train.clone(),
            y: inst.y.clone(),
        };
        let n = inst.kern.eigenpairs.n();
        for v in (0..n).step_by(7) {
            let (mu, sigma) = gp.predict(v);
            let (mu_o, sigma_o) = dense_posterior(&fitted, &gp, v);
            assert!((mu - mu_o).abs() <= 1e-8, "instance {idx} node {v}");
            assert!((sigma - sigma_o).abs() <= 1e-8, "instance {idx} node {v}");
        }
    }
}

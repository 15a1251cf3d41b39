use super::*;
use crate::linalg::{mat_mul, solve};
use crate::nn::{Activation, Layer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_mat(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> Mat2 {
    Mat2::new(r, c, (0..r * c).map(|_| rng.gen_range(-scale..scale)).collect()).unwrap()
}

fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> Mat2 {
    let a = random_mat(rng, n, n, 1.0);
    mat_mul(&a, &a.transpose()).unwrap().add(&Mat2::identity(n).scale(0.1)).unwrap()
}

fn random_mlp(rng: &mut ChaCha8Rng, p: usize, n: usize) -> ModelSpec {
    let hidden = rng.gen_range(2..6);
    ModelSpec::new(
        vec![
            Layer::dense(random_mat(rng, p, hidden, 1.0), random_mat(rng, 1, hidden, 0.5).into_vec(), Activation::Tanh).unwrap(),
            Layer::dense(random_mat(rng, hidden, n, 1.0), random_mat(rng, 1, n, 0.5).into_vec(), Activation::Tanh).unwrap(),
        ],
        None,
    )
    .unwrap()
}

fn base_cfg(m: usize, n: usize) -> ControllerConfig {
    ControllerConfig {
        horizon: 1,
        n1: 1,
        n2: 1,
        nc: 1,
        n_d: 1,
        d_d: 1,
        m,
        n,
        w: 0,
        q: Mat2::identity(n),
        lambda: Mat2::identity(m),
        s: 1e-20,
        b: 0.0,
        r: 400.0,
        eps: 1e-3,
        max_iters: 3,
        tol: 1e-4,
        u_neutral: vec![0.0; m],
    }
}

fn linear_model(w: Mat2) -> ModelSpec {
    let units = w.cols();
    ModelSpec::new(vec![Layer::dense(w, vec![0.0; units], Activation::Linear).unwrap()], None).unwrap()
}

struct Instance {
    cfg: ControllerConfig,
    local: LocalModel,
    yref: Mat2,
    plan: Mat2,
    u_prev: Vec<f64>,
}

fn random_instance(rng: &mut ChaCha8Rng) -> Instance {
    let (m, n) = (rng.gen_range(1..=3), rng.gen_range(1..=3));
    let horizon = rng.gen_range(1..=3);
    let nc = rng.gen_range(1..=horizon);
    let n1 = rng.gen_range(1..=horizon);
    let n2 = rng.gen_range(n1..=horizon);
    let cfg = ControllerConfig {
        horizon,
        n1,
        n2,
        nc,
        n_d: rng.gen_range(1..=2),
        d_d: rng.gen_range(1..=2),
        w: rng.gen_range(0..=2),
        q: random_spd(rng, n),
        lambda: random_spd(rng, m),
        s: 1e-3,
        b: 0.1,
        r: 4.0,
        ..base_cfg(m, n)
    };
    let model = random_mlp(rng, cfg.input_dim(), n);
    let x: Vec<f64> = (0..cfg.input_dim()).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let anchor = random_mat(rng, nc, m, 1.0);
    let pred = rollout(&model, &x, &anchor, &cfg).unwrap();
    let sens = sensitivity(&model, &pred.first_input, &cfg).unwrap();
    let plan = anchor.add(&random_mat(rng, nc, m, 0.2)).unwrap();
    Instance {
        local: LocalModel { anchor, yhat0: pred.yhat, sens },
        yref: random_mat(rng, horizon, n, 1.0),
        plan,
        u_prev: random_mat(rng, 1, m, 1.0).into_vec(),
        cfg,
    }
}

fn fd_gradient(inst: &Instance, plan: &Mat2, h: f64) -> Vec<f64> {
    (0..plan.as_slice().len())
        .map(|i| {
            let mut p = plan.clone();
            p.as_mut_slice()[i] += h;
            let up = inst.local.cost(&inst.yref, &p, &inst.u_prev, &inst.cfg).unwrap();
            p.as_mut_slice()[i] -= 2.0 * h;
            let dn = inst.local.cost(&inst.yref, &p, &inst.u_prev, &inst.cfg).unwrap();
            (up - dn) / (2.0 * h)
        })
        .collect()
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).fold(0.0, |m: f64, (x, y)| m.max((x - y).abs()));
    let scale = b.iter().fold(0.0, |m: f64, y| m.max(y.abs()));
    diff / scale.max(1e-8)
}

#[test]
fn config_from_json_diag_and_full() {
    let doc = r#"{"N": 3, "Nc": 2, "n_d": 2, "d_d": 1, "m": 2, "n": 1, "w": 1,
        "Q": [2.0], "Lambda": [[1.0, 0.5], [0.5, 1.0]], "s": 1e-20, "b": 0.0, "r": 4.0}"#;
    let cfg: ControllerConfig = serde_json::from_str(doc).unwrap();
    assert_eq!((cfg.n1, cfg.n2, cfg.nc, cfg.max_iters), (1, 3, 2, 3));
    assert_eq!(cfg.q, Mat2::diag(&[2.0]));
    assert_eq!(cfg.lambda[(0, 1)], 0.5);
    assert_eq!(cfg.input_dim(), 2 * 2 + 1 + 1);
    assert_eq!(cfg.u_neutral, vec![0.0, 0.0]);
    let back: ControllerConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
    assert_eq!(back, cfg);
}

#[test]
fn config_invariants() {
    let ok = base_cfg(1, 1);
    ok.validate().unwrap();
    for broken in [
        ControllerConfig { n1: 2, horizon: 1, ..ok.clone() },
        ControllerConfig { nc: 2, ..ok.clone() },
        ControllerConfig { s: 0.0, ..ok.clone() },
        ControllerConfig { r: -1.0, ..ok.clone() },
        ControllerConfig { q: Mat2::from_rows(&[vec![1.0, 2.0], vec![0.0, 1.0]]).unwrap(), n: 2, ..ok.clone() },
        ControllerConfig { u_neutral: vec![500.0], ..ok.clone() },
        ControllerConfig { m: 0, ..ok.clone() },
    ] {
        assert!(matches!(broken.validate(), Err(Error::Argument(_))), "{broken:?}");
    }
}

#[test]
fn input_vector_single_lag() {
    let cfg = base_cfg(1, 1);
    let mut st = ControlState::new(&cfg);
    build_input_vector(&mut st, &cfg, &[1.0], &[2.0], &[]).unwrap();
    assert_eq!(st.x_inputs, vec![1.0, 2.0]);
}

#[test]
fn input_vector_most_recent_first() {
    let cfg = ControllerConfig { n_d: 2, ..base_cfg(1, 1) };
    let mut st = ControlState::new(&cfg);
    build_input_vector(&mut st, &cfg, &[1.0], &[0.0], &[]).unwrap();
    build_input_vector(&mut st, &cfg, &[2.0], &[0.0], &[]).unwrap();
    assert_eq!(&st.x_inputs[..2], &[2.0, 1.0]);
}

#[test]
fn input_vector_matches_deque_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cfg = ControllerConfig { n_d: 3, d_d: 2, w: 3, ..base_cfg(2, 2) };
    let mut st = ControlState::new(&cfg);
    let mut us = std::collections::VecDeque::from(vec![vec![0.0; 2]; 3]);
    let mut ys = std::collections::VecDeque::from(vec![vec![0.0; 2]; 2]);
    for _ in 0..20 {
        let u = random_mat(&mut rng, 1, 2, 1.0).into_vec();
        let y = random_mat(&mut rng, 1, 2, 1.0).into_vec();
        let l = random_mat(&mut rng, 1, 3, 1.0).into_vec();
        build_input_vector(&mut st, &cfg, &u, &y, &l).unwrap();
        us.push_front(u);
        us.pop_back();
        ys.push_front(y);
        ys.pop_back();
        let want: Vec<f64> = us.iter().flatten().chain(ys.iter().flatten()).chain(&l).copied().collect();
        assert_eq!(st.x_inputs, want);
        assert_eq!(&st.x_inputs[10..], &l[..]);
    }
    assert!(matches!(build_input_vector(&mut st, &cfg, &[1.0], &[0.0; 2], &[0.0; 3]), Err(Error::Dimension(_))));
}

#[test]
fn horizon_of_one_is_single_call() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let cfg = ControllerConfig { n_d: 2, d_d: 2, w: 1, ..base_cfg(1, 2) };
    let model = random_mlp(&mut rng, cfg.input_dim(), 2);
    let mut st = ControlState::new(&cfg);
    build_input_vector(&mut st, &cfg, &[0.3], &[0.1, -0.2], &[0.05]).unwrap();
    st.plan[(0, 0)] = 0.4;
    let pred = predict_horizon(&model, &st, &cfg).unwrap();
    let mut x = st.x_inputs.clone();
    x[1] = x[0];
    x[0] = 0.4;
    assert_eq!(pred.yhat.row(0), &model.forward(&x).unwrap()[..]);
    assert_eq!(pred.first_input, x);
}

#[test]
fn identity_like_linear_rollout() {
    // y_k = u_k: weight 1 on the newest input block, 0 elsewhere
    let cfg = ControllerConfig { horizon: 3, n2: 3, nc: 3, n_d: 2, d_d: 2, ..base_cfg(1, 1) };
    let w = Mat2::col_vector(&[1.0, 0.0, 0.0, 0.0]).unwrap();
    let model = linear_model(w);
    let mut st = ControlState::new(&cfg);
    st.plan = Mat2::col_vector(&[0.2, -0.1, 0.4]).unwrap();
    let pred = predict_horizon(&model, &st, &cfg).unwrap();
    assert_eq!(pred.yhat, pred.inputs_used);
}

#[test]
fn short_control_horizon_copies_last_row() {
    let cfg = ControllerConfig { horizon: 3, n2: 3, nc: 1, ..base_cfg(2, 1) };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let model = random_mlp(&mut rng, cfg.input_dim(), 1);
    let mut st = ControlState::new(&cfg);
    st.plan = Mat2::from_rows(&[vec![0.3, -0.3]]).unwrap();
    let pred = predict_horizon(&model, &st, &cfg).unwrap();
    for j in 0..3 {
        assert_eq!(pred.inputs_used.row(j), &[0.3, -0.3]);
    }
}

#[test]
fn cost_at_barrier_center() {
    for s in [1e-20, 0.3] {
        let cfg = ControllerConfig { nc: 2, horizon: 2, n2: 2, s, b: 0.5, r: 4.0, u_neutral: vec![0.5; 2], ..base_cfg(2, 1) };
        let y = Mat2::filled(2, 1, 0.7);
        let plan = Mat2::filled(2, 2, 0.5);
        let j = cost(&y, &y, &plan, &[0.5, 0.5], &cfg).unwrap();
        let per_entry = 4.0 * s / cfg.r - 4.0 / cfg.r;
        assert!((j - 4.0 * per_entry).abs() < 1e-15);
    }
}

#[test]
fn cost_tracking_term() {
    let cfg = base_cfg(1, 2);
    let yref = Mat2::from_rows(&[vec![3.0, 4.0]]).unwrap();
    let yhat = Mat2::zeros(1, 2);
    let plan = Mat2::zeros(1, 1);
    let j = cost(&yhat, &yref, &plan, &[0.0], &cfg).unwrap();
    let barrier0 = barrier(0.0, &cfg);
    assert!((j - barrier0 - 25.0).abs() < 1e-12);
}

#[test]
fn cost_matches_direct_summation() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..50 {
        let inst = random_instance(&mut rng);
        let cfg = &inst.cfg;
        let yhat = random_mat(&mut rng, cfg.horizon, cfg.n, 1.0);
        let got = cost(&yhat, &inst.yref, &inst.plan, &inst.u_prev, cfg).unwrap();
        let mut want = 0.0;
        for j in cfg.n1 - 1..cfg.n2 {
            for a in 0..cfg.n {
                for b in 0..cfg.n {
                    want += (inst.yref[(j, a)] - yhat[(j, a)]) * cfg.q[(a, b)] * (inst.yref[(j, b)] - yhat[(j, b)]);
                }
            }
        }
        for j in 0..cfg.nc {
            for a in 0..cfg.m {
                for b in 0..cfg.m {
                    let du = |k: usize| {
                        let prev = if j == 0 { inst.u_prev[k] } else { inst.plan[(j - 1, k)] };
                        inst.plan[(j, k)] - prev
                    };
                    want += du(a) * cfg.lambda[(a, b)] * du(b);
                }
            }
        }
        for u in inst.plan.as_slice() {
            want += cfg.s / (u + cfg.r / 2.0 - cfg.b) + cfg.s / (cfg.r / 2.0 + cfg.b - u) - 4.0 / cfg.r;
        }
        assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0));
    }
}

#[test]
fn cost_rejects_pole_crossing() {
    let cfg = ControllerConfig { r: 2.0, ..base_cfg(1, 1) };
    let y = Mat2::zeros(1, 1);
    let plan = Mat2::filled(1, 1, 1.0);
    assert!(matches!(cost(&y, &y, &plan, &[0.0], &cfg), Err(Error::BarrierDomain { row: 0, col: 0, .. })));
}

#[test]
fn kronecker_delta_jacobian() {
    assert_eq!(delta_u_jacobian(2, 2), 1.0);
    assert_eq!(delta_u_jacobian(1, 2), -1.0);
    assert_eq!(delta_u_jacobian(0, 2), 0.0);
    assert_eq!(delta_u_jacobian(3, 2), 0.0);
    assert_eq!(delta_u_jacobian(0, 0), 1.0);
}

#[test]
fn jacobian_vanishes_at_symmetric_center() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cfg = ControllerConfig { s: 0.5, b: 0.2, r: 2.0, horizon: 2, n2: 2, nc: 2, u_neutral: vec![0.2], ..base_cfg(1, 2) };
    let plan = Mat2::filled(2, 1, 0.2);
    let yhat0 = random_mat(&mut rng, 2, 2, 1.0);
    let local = LocalModel {
        anchor: plan.clone(),
        yhat0: yhat0.clone(),
        sens: Sensitivity { d: random_mat(&mut rng, 2, 1, 1.0), c: random_mat(&mut rng, 2, 1, 1.0) },
    };
    let g = cost_jacobian(&local, &yhat0, &plan, &[0.2], &cfg).unwrap();
    assert!(g.max_abs() < 1e-15);
}

#[test]
fn jacobian_and_hessian_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..100 {
        let inst = random_instance(&mut rng);
        let g = cost_jacobian(&inst.local, &inst.yref, &inst.plan, &inst.u_prev, &inst.cfg).unwrap();
        let fd = fd_gradient(&inst, &inst.plan, 1e-6);
        assert!(rel_err(&fd, g.as_slice()) <= 1e-4, "{:?} vs {:?}", fd, g.as_slice());

        let hess = cost_hessian(&inst.local, &inst.yref, &inst.plan, &inst.u_prev, &inst.cfg).unwrap();
        let dim = inst.cfg.plan_dim();
        let h = 1e-5;
        for i in 0..dim {
            let mut p = inst.plan.clone();
            p.as_mut_slice()[i] += h;
            let gp = cost_jacobian(&inst.local, &inst.yref, &p, &inst.u_prev, &inst.cfg).unwrap();
            p.as_mut_slice()[i] -= 2.0 * h;
            let gm = cost_jacobian(&inst.local, &inst.yref, &p, &inst.u_prev, &inst.cfg).unwrap();
            let col: Vec<f64> = (0..dim).map(|k| (gp.as_slice()[k] - gm.as_slice()[k]) / (2.0 * h)).collect();
            let an: Vec<f64> = (0..dim).map(|k| hess[(k, i)]).collect();
            assert!(rel_err(&col, &an) <= 1e-3, "{col:?} vs {an:?}");
        }
        assert!(hess.is_symmetric(1e-9));
    }
}

#[test]
fn linear_closed_form_jacobian() {
    // one step, single input block: J' = -2 (yref - yhat)^T W_u
    let cfg = ControllerConfig { lambda: Mat2::zeros(2, 2), ..base_cfg(2, 3) };
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let w = random_mat(&mut rng, cfg.input_dim(), 3, 1.0);
    let model = linear_model(w.clone());
    let st = ControlState { x_inputs: random_mat(&mut rng, 1, cfg.input_dim(), 0.5).into_vec(), ..ControlState::new(&cfg) };
    let pred = predict_horizon(&model, &st, &cfg).unwrap();
    let sens = sensitivity(&model, &pred.first_input, &cfg).unwrap();
    let local = LocalModel { anchor: st.plan.clone(), yhat0: pred.yhat.clone(), sens };
    let yref = random_mat(&mut rng, 1, 3, 1.0);
    let g = cost_jacobian(&local, &yref, &st.plan, &st.last_u, &cfg).unwrap();
    for a in 0..2 {
        let want: f64 = (0..3).map(|k| -2.0 * (yref[(0, k)] - pred.yhat[(0, k)]) * w[(a, k)]).sum();
        assert!((g[(0, a)] - want).abs() < 1e-8);
    }
}

#[test]
fn lambda_only_hessian_is_second_difference() {
    let cfg = ControllerConfig { horizon: 4, n2: 4, nc: 4, q: Mat2::zeros(1, 1), lambda: Mat2::diag(&[1.5]), ..base_cfg(1, 1) };
    let local = LocalModel {
        anchor: Mat2::zeros(4, 1),
        yhat0: Mat2::zeros(4, 1),
        sens: Sensitivity { d: Mat2::identity(1), c: Mat2::zeros(1, 1) },
    };
    let plan = Mat2::col_vector(&[0.1, 0.3, -0.2, 0.4]).unwrap();
    let hess = cost_hessian(&local, &Mat2::zeros(4, 1), &plan, &[0.0], &cfg).unwrap();
    let l = 1.5;
    let want = Mat2::from_rows(&[
        vec![4.0 * l, -2.0 * l, 0.0, 0.0],
        vec![-2.0 * l, 4.0 * l, -2.0 * l, 0.0],
        vec![0.0, -2.0 * l, 4.0 * l, -2.0 * l],
        vec![0.0, 0.0, -2.0 * l, 2.0 * l],
    ])
    .unwrap();
    assert!(hess.sub(&want).unwrap().max_abs() < 1e-12);
}

#[test]
fn exact_tracking_hessian_is_gauss_newton() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let cfg = ControllerConfig { lambda: Mat2::zeros(2, 2), q: random_spd(&mut rng, 2), ..base_cfg(2, 2) };
    let d = random_mat(&mut rng, 2, 2, 1.0);
    let plan = Mat2::zeros(1, 2);
    let yhat0 = random_mat(&mut rng, 1, 2, 1.0);
    let local = LocalModel { anchor: plan.clone(), yhat0: yhat0.clone(), sens: Sensitivity { d: d.clone(), c: random_mat(&mut rng, 2, 2, 1.0) } };
    let hess = cost_hessian(&local, &yhat0, &plan, &[0.0, 0.0], &cfg).unwrap();
    let gn = mat_mul(&mat_mul(&d.transpose(), &cfg.q).unwrap(), &d).unwrap().scale(2.0);
    assert!(hess.sub(&gn).unwrap().max_abs() < 1e-12);
}

#[test]
fn convex_toy_hessian_is_positive_definite() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..20 {
        let mut inst = random_instance(&mut rng);
        inst.local.sens.c = Mat2::zeros(inst.cfg.n, inst.cfg.m);
        inst.cfg.s = 1e-20;
        let hess = cost_hessian(&inst.local, &inst.yref, &inst.plan, &inst.u_prev, &inst.cfg).unwrap();
        // Cholesky succeeds only for positive-definite matrices
        let n = hess.rows();
        let mut l = Mat2::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let s: f64 = (0..j).map(|k| l[(i, k)] * l[(j, k)]).sum();
                if i == j {
                    let d = hess[(i, i)] - s;
                    assert!(d > 0.0);
                    l[(i, i)] = d.sqrt();
                } else {
                    l[(i, j)] = (hess[(i, j)] - s) / l[(j, j)];
                }
            }
        }
    }
}

/// Linear plant with no output feedback and one input block, so every
/// prediction is affine in its own plan row.
fn quadratic_setup(rng: &mut ChaCha8Rng, horizon: usize, nc: usize, m: usize, n: usize) -> (ModelSpec, ControllerConfig, ControlState, Mat2) {
    let cfg = ControllerConfig {
        horizon,
        n2: horizon,
        nc,
        q: random_spd(rng, n),
        lambda: random_spd(rng, m),
        w: 1,
        ..base_cfg(m, n)
    };
    let mut w = random_mat(rng, cfg.input_dim(), n, 1.0);
    for i in m..m + n {
        w.row_mut(i).fill(0.0);
    }
    let model = linear_model(w);
    let mut st = ControlState::new(&cfg);
    st.x_inputs = random_mat(rng, 1, cfg.input_dim(), 0.5).into_vec();
    st.last_u = random_mat(rng, 1, m, 0.5).into_vec();
    st.plan = random_mat(rng, nc, m, 0.5);
    let yref = random_mat(rng, horizon, n, 1.0);
    (model, cfg, st, yref)
}

/// Normal-equations minimizer of the quadratic, assembled independently.
fn closed_form_plan(model: &ModelSpec, cfg: &ControllerConfig, st: &ControlState, yref: &Mat2) -> Vec<f64> {
    let (m, n, dim) = (cfg.m, cfg.n, cfg.plan_dim());
    let w = &model.layers[0].weights;
    let wu = Mat2::new(m, n, w.as_slice()[..m * n].to_vec()).unwrap();
    let mut x0 = st.x_inputs.clone();
    x0[..m].fill(0.0);
    let c0 = model.forward(&x0).unwrap();
    let mut a = Mat2::zeros(dim, dim);
    let mut rhs = vec![0.0; dim];
    for j in cfg.n1 - 1..cfg.n2 {
        let h = j.min(cfg.nc - 1);
        // yhat_j = c0 + Wu^T U_h
        let e0: Vec<f64> = (0..n).map(|k| yref[(j, k)] - c0[k]).collect();
        let qe = cfg.q.mul_vec(&e0).unwrap();
        let wq = mat_mul(&wu, &cfg.q).unwrap();
        let wqw = mat_mul(&wq, &wu.transpose()).unwrap();
        for p in 0..m {
            for q in 0..m {
                a[(h * m + p, h * m + q)] += wqw[(p, q)];
            }
            rhs[h * m + p] += (0..n).map(|k| wu[(p, k)] * qe[k]).sum::<f64>();
        }
    }
    for j in 0..cfg.nc {
        for p in 0..m {
            for q in 0..m {
                let l = cfg.lambda[(p, q)];
                a[(j * m + p, j * m + q)] += l;
                if j > 0 {
                    a[((j - 1) * m + p, (j - 1) * m + q)] += l;
                    a[(j * m + p, (j - 1) * m + q)] -= l;
                    a[((j - 1) * m + p, j * m + q)] -= l;
                } else {
                    rhs[p] += l * st.last_u[q];
                }
            }
        }
    }
    solve(&a, &rhs).unwrap()
}

#[test]
fn quadratic_solved_in_one_iteration() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..30 {
        let horizon = rng.gen_range(1..=3);
        let nc = rng.gen_range(1..=horizon);
        let (m, n) = (rng.gen_range(1..=3), rng.gen_range(1..=3));
        let (model, cfg, st, yref) = quadratic_setup(&mut rng, horizon, nc, m, n);
        let cfg = ControllerConfig { max_iters: 1, ..cfg };
        let res = newton_step(&model, &st, &yref, &cfg).unwrap();
        let want = closed_form_plan(&model, &cfg, &st, &yref);
        assert_eq!(res.iters, 1);
        assert!(rel_err(res.plan.as_slice(), &want) * want.iter().fold(1.0, |m: f64, v| m.max(v.abs())) < 1e-8);
        // a second iteration takes no further step
        let again = newton_step(&model, &ControlState { plan: res.plan.clone(), ..st.clone() }, &yref, &cfg).unwrap();
        assert!(again.residual < 1e-8);
    }
}

#[test]
fn zero_gradient_start_is_fixed_point() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (model, cfg, mut st, _) = quadratic_setup(&mut rng, 2, 2, 1, 1);
    // with a constant plan equal to the last input and references equal to
    // the predictions, only the negligible barrier slope remains
    st.plan = Mat2::filled(2, 1, st.last_u[0]);
    let yref = predict_horizon(&model, &st, &cfg).unwrap().yhat;
    let res = newton_step(&model, &st, &yref, &cfg).unwrap();
    assert!(res.plan.sub(&st.plan).unwrap().max_abs() < 1e-20);
    assert!(res.residual < 1e-20);
}

#[test]
fn descent_is_monotone_on_convex_toys() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..20 {
        let (model, cfg, st, yref) = quadratic_setup(&mut rng, 3, 2, 2, 2);
        let cfg = ControllerConfig { max_iters: 5, tol: 0.0, ..cfg };
        let res = newton_step(&model, &st, &yref, &cfg).unwrap();
        for w in res.costs.windows(2) {
            assert!(w[1] <= w[0] + 1e-12 * w[0].abs().max(1.0));
        }
    }
}

#[test]
fn plans_stay_inside_barrier() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..50 {
        let m = rng.gen_range(1..=2);
        let cfg = ControllerConfig { r: 1.0, b: 0.0, s: 1e-6, horizon: 2, n2: 2, nc: 2, ..base_cfg(m, 1) };
        let model = random_mlp(&mut rng, cfg.input_dim(), 1);
        let mut st = ControlState::new(&cfg);
        st.x_inputs = random_mat(&mut rng, 1, cfg.input_dim(), 0.5).into_vec();
        // references far away push the unconstrained optimum past the poles
        let yref = Mat2::filled(2, 1, rng.gen_range(-5.0..5.0));
        let res = newton_step(&model, &st, &yref, &cfg).unwrap();
        let (lo, hi) = cfg.domain();
        assert!(res.plan.as_slice().iter().all(|u| *u > lo && *u < hi));
    }
}

#[test]
fn warm_start_outside_domain_is_clamped() {
    let cfg = ControllerConfig { r: 1.0, ..base_cfg(1, 1) };
    let model = linear_model(Mat2::col_vector(&[1.0, 0.0]).unwrap());
    let mut st = ControlState::new(&cfg);
    st.plan = Mat2::filled(1, 1, 3.0);
    let res = newton_step(&model, &st, &Mat2::zeros(1, 1), &cfg).unwrap();
    assert!(res.plan[(0, 0)] < 0.5);
}

#[test]
fn argmin_is_invariant_to_weight_scaling() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..10 {
        let (model, cfg, st, yref) = quadratic_setup(&mut rng, 2, 2, 2, 2);
        let a = newton_step(&model, &st, &yref, &cfg).unwrap();
        let scaled = ControllerConfig { q: cfg.q.scale(7.5), lambda: cfg.lambda.scale(7.5), ..cfg.clone() };
        let b = newton_step(&model, &st, &yref, &scaled).unwrap();
        assert!(a.plan.sub(&b.plan).unwrap().max_abs() < cfg.tol);
        assert!((b.costs[0] - a.costs[0]).abs() > 0.0);
    }
}

#[test]
fn singular_hessian_retries_with_damping() {
    // Q = 0 and Lambda = 0 with a negligible barrier: the Hessian is ~0
    let cfg = ControllerConfig { q: Mat2::zeros(1, 1), lambda: Mat2::zeros(1, 1), ..base_cfg(1, 1) };
    let model = linear_model(Mat2::col_vector(&[1.0, 0.0]).unwrap());
    let st = ControlState::new(&cfg);
    let hess = Mat2::zeros(2, 2);
    assert!(matches!(lu_factor(&hess), Err(Error::SingularMatrix { .. })));
    let step = solve_newton(&Mat2::zeros(1, 1), &[0.0]).unwrap();
    assert_eq!(step, vec![0.0]);
    let res = newton_step(&model, &st, &Mat2::zeros(1, 1), &cfg).unwrap();
    assert!(res.plan.all_finite());
}

#[test]
fn equilibrium_holds_previous_input() {
    // static plant y = 0.5 u, model exact, reference equal to the current output
    let cfg = ControllerConfig { n_d: 1, d_d: 1, ..base_cfg(1, 1) };
    let model = linear_model(Mat2::col_vector(&[0.5, 0.0]).unwrap());
    let mut ctl = Controller::new(model, cfg.clone()).unwrap();
    ctl.state.last_u = vec![0.3];
    ctl.state.plan = Mat2::filled(1, 1, 0.3);
    ctl.observe(&[0.15]).unwrap();
    let res = ctl.step(&Mat2::filled(1, 1, 0.15), &[]).unwrap();
    assert!((res.plan[(0, 0)] - 0.3).abs() < cfg.tol);
    assert_eq!(ctl.state.last_u, res.plan.row(0).to_vec());
}

#[test]
fn control_sequence_is_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let cfg = ControllerConfig { n_d: 2, d_d: 2, horizon: 3, n2: 3, nc: 2, w: 1, ..base_cfg(1, 1) };
        let model = random_mlp(&mut rng, cfg.input_dim(), 1);
        let mut ctl = Controller::new(model, cfg).unwrap();
        (0..30)
            .map(|k| {
                let yref = Mat2::filled(3, 1, (k as f64 * 0.1).sin() * 0.3);
                ctl.step(&yref, &[0.01 * k as f64]).unwrap().plan[(0, 0)]
            })
            .collect::<Vec<f64>>()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
}

#[test]
fn controller_checks_model_shape() {
    let cfg = ControllerConfig { n_d: 2, ..base_cfg(1, 1) };
    let model = linear_model(Mat2::col_vector(&[1.0, 0.0]).unwrap());
    assert!(matches!(Controller::new(model, cfg), Err(Error::ModelShape(_))));
}

#[test]
fn plan_is_shifted_for_warm_start() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let cfg = ControllerConfig { horizon: 3, n2: 3, nc: 3, ..base_cfg(1, 1) };
    let model = random_mlp(&mut rng, cfg.input_dim(), 1);
    let mut ctl = Controller::new(model, cfg).unwrap();
    let res = ctl.step(&Mat2::filled(3, 1, 0.2), &[]).unwrap();
    assert_eq!(ctl.state.plan.as_slice(), &[res.plan[(1, 0)], res.plan[(2, 0)], res.plan[(2, 0)]]);
}

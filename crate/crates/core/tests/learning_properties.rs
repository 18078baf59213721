use nalgebra::{DMatrix, DVector};
use pfcc_core::learning::{
    learning_step, DataBuffer, LearnedController, LearnerConfig, NoiseSource, PreparedWindow, Regression,
};
use pfcc_core::matops::SymmetricMatrix;
use pfcc_core::model_control::{
    bellman_backup, build_leader_augmented, greedy_gain, AgentDynamics, AugmentedSystem, FormationDynamics,
};
use proptest::prelude::*;

fn config() -> ProptestConfig {
    ProptestConfig::with_cases(1000)
}

fn rotation(radius: f64, angle: f64) -> DMatrix<f64> {
    let (s, c) = angle.sin_cos();
    DMatrix::from_row_slice(2, 2, &[c, -s, s, c]) * radius
}

#[derive(Debug, Clone)]
struct Plant {
    a: Vec<f64>,
    b: Vec<f64>,
    radii: (f64, f64),
    angles: (f64, f64),
    weight: f64,
}

fn plants() -> impl Strategy<Value = Plant> {
    (
        prop::collection::vec(-1.5f64..1.5, 4),
        prop::collection::vec(0.3f64..1.0, 2),
        (0.5f64..1.0, 0.5f64..1.0),
        (0.0f64..std::f64::consts::PI, 0.0f64..std::f64::consts::PI),
        0.5f64..2.0,
    )
        .prop_map(|(a, b, radii, angles, weight)| Plant {
            a,
            b,
            radii,
            angles,
            weight,
        })
}

/// Single-input plant with one formation block; its value iteration is not
/// deadbeat, so the first iterates differ.
fn system(p: &Plant) -> AugmentedSystem {
    let dyn_ = AgentDynamics::new(DMatrix::from_row_slice(2, 2, &p.a), DMatrix::from_column_slice(2, 1, &p.b)).unwrap();
    let form = FormationDynamics::new(rotation(p.radii.0, p.angles.0), DVector::zeros(2)).unwrap();
    let q = DMatrix::identity(2, 2) * p.weight;
    build_leader_augmented(&dyn_, &form, &rotation(p.radii.1, p.angles.1), &q).unwrap()
}

/// Transitions from independent random states and inputs.
fn window(sys: &AugmentedSystem, seed: u64, input_scale: f64) -> DataBuffer {
    let (d, m) = (sys.dim(), sys.inputs());
    let cfg = LearnerConfig::default();
    let mut buf = DataBuffer::new(d, m, cfg.window_for(d, m).unwrap());
    let mut noise = NoiseSource::new(seed, 0);
    while !buf.is_full() {
        let x = noise.standard_normal(d);
        let u = noise.normal(input_scale, m);
        let next = &sys.a_bar * &x + &sys.b_bar * &u;
        buf.record_sample(&x, &u, &next).unwrap();
    }
    buf
}

fn learner() -> LearnerConfig {
    LearnerConfig {
        gain_delta_threshold: f64::MIN_POSITIVE,
        max_iterations: 1000,
        ..LearnerConfig::default()
    }
}

fn gap(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax() / a.amax().max(b.amax()).max(1.0)
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn learned_values_follow_model_value_iteration(plant in plants(), seed in any::<u64>()) {
        let sys = system(&plant);
        let win = PreparedWindow::new(&window(&sys, seed, 1.0), Regression::default()).unwrap();
        let cfg = learner();
        let mut ctrl = LearnedController::new(DMatrix::zeros(sys.inputs(), sys.dim()));
        let mut p = SymmetricMatrix::zeros(sys.dim());
        for j in 1..=20 {
            let k = greedy_gain(&sys, &p);
            p = bellman_backup(&sys, &p, &k);
            ctrl = learning_step(&ctrl, &win, &sys.q, &sys.c, &cfg).unwrap();
            let e = gap(ctrl.p_hat.as_matrix(), p.as_matrix());
            prop_assert!(e < 1e-6, "iteration {j}: relative gap {e}");
            let m = ctrl.p_hat.as_matrix();
            prop_assert_eq!(m, &m.transpose());
        }
    }

    #[test]
    fn learned_values_do_not_depend_on_behaviour_data(plant in plants(), seeds in (any::<u64>(), any::<u64>())) {
        let sys = system(&plant);
        let first = PreparedWindow::new(&window(&sys, seeds.0, 1.0), Regression::default()).unwrap();
        let second = PreparedWindow::new(&window(&sys, seeds.1, 3.0), Regression::default()).unwrap();
        let cfg = learner();
        let start = LearnedController::new(DMatrix::zeros(sys.inputs(), sys.dim()));
        let (mut a, mut b) = (start.clone(), start);
        for _ in 0..5 {
            a = learning_step(&a, &first, &sys.q, &sys.c, &cfg).unwrap();
            b = learning_step(&b, &second, &sys.q, &sys.c, &cfg).unwrap();
        }
        prop_assert!(gap(a.p_hat.as_matrix(), b.p_hat.as_matrix()) < 1e-8);
        prop_assert!(gap(&a.k_hat, &b.k_hat) < 1e-8);
    }
}

use lpca_tensor::checks::{self, INJECTED_FAULT};
use lpca_tensor::gradcheck::{gradcheck, rel_err};
use lpca_tensor::{Shape, Tape, Tensor};

#[test]
fn every_op_passes_gradcheck_over_five_seeds() {
    for check in checks::all() {
        for seed in 0..5 {
            let report = (check.run)(seed).unwrap();
            assert!(
                report.passed(1e-6),
                "{} seed {seed}: max rel err {:.3e} at {:?}, non-finite {:?}",
                check.name,
                report.max_rel_err,
                report.worst,
                report.non_finite
            );
            assert!(report.checked > 0);
        }
    }
}

#[test]
fn sum_of_squares_closed_form() {
    let x = Tensor::from_dims([1, 1, 1, 3], vec![1.0, 2.0, 3.0]).unwrap();
    let tape = Tape::new();
    let v = tape.leaf(x.clone());
    let y = v.mul(&v).unwrap().sum_all();
    tape.backward(&y).unwrap();
    assert_eq!(tape.grad(&v).unwrap().data(), &[2.0, 4.0, 6.0]);
    let report = gradcheck(|v| Ok(v.mul(v)?.sum_all()), &x, 1e-5, None, 0).unwrap();
    assert!(report.max_rel_err < 1e-9, "{}", report.max_rel_err);
}

#[test]
fn injected_fault_is_flagged() {
    let report = (INJECTED_FAULT.run)(0).unwrap();
    // analytic = 2 × numeric ⇒ |2g − g| / max(2g, g) = 1/2
    assert!((report.max_rel_err - 0.5).abs() < 1e-6, "{}", report.max_rel_err);
    assert!(!report.passed(1e-6));
}

#[test]
fn non_finite_probe_is_reported_per_coordinate() {
    // ln(x) is finite at x = 5e-6 but not at x − 1e-5.
    let x = Tensor::from_dims([1, 1, 1, 2], vec![5e-6, 1.0]).unwrap();
    let report = gradcheck(
        |v| {
            let out = v.value().map(f64::ln);
            Ok(v.tape().record(&[v], out, |ctx| {
                let g = ctx.grad().data().iter().zip(ctx.input(0).data()).map(|(g, x)| g / x).collect();
                ctx.accumulate(0, g);
            }))
        },
        &x,
        1e-5,
        None,
        0,
    )
    .unwrap();
    assert_eq!(report.non_finite, vec!["0".to_string()]);
}

#[test]
fn tape_replay_is_bit_identical() {
    let run = || {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::from_fn(Shape::new(1, 2, 3, 3).unwrap(), |_, c, h, w| {
            (c as f64 - 0.5) * (h as f64 + 0.3) - w as f64 * 0.7
        }));
        let y = x.relu().mul(&x).unwrap().softmax_last().unwrap().scale(3.0).sum_all();
        tape.backward(&y).unwrap();
        tape.grad(&x).unwrap()
    };
    let (a, b) = (run(), run());
    assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn rel_err_floor() {
    assert_eq!(rel_err(0.0, 0.0), 0.0);
    assert!((rel_err(1e-12, 0.0) - 1e-4).abs() < 1e-18);
}

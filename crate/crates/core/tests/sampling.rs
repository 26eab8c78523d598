mod common;

use common::small_arch;
use difflab::consistency::{consistency, shared_noise_run, SampleGrid, DATA_PEAK, PSNR_CAP};
use difflab::diffusion::{
    generate, Denoiser, NoiseSchedule, NoiseStream, PredictionTarget, ScheduleKind,
};
use difflab::models::DenoiserMlp;
use difflab::Error;

fn setup(target: PredictionTarget) -> (NoiseSchedule, DenoiserMlp) {
    let sched = NoiseSchedule::new(ScheduleKind::Cosine, 40).unwrap();
    let model = DenoiserMlp::new(small_arch(target, vec![16, 16], 8)).unwrap();
    (sched, model)
}

#[test]
fn generation_is_deterministic_under_shared_noise() {
    for target in [PredictionTarget::Epsilon, PredictionTarget::X0] {
        let (sched, model) = setup(target);
        let params = model.init_params(4).values;
        let m = model.bind(&params);
        let base = NoiseStream::seeded(99, 10);
        let a = generate(&m, &sched, &mut base.clone(), 10).unwrap();
        let b = generate(&m, &sched, &mut base.clone(), 10).unwrap();
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert!(a.iter().all(|v| v.is_finite()));
        // Sample j depends only on stream j.
        let first = generate(&m, &sched, &mut base.clone(), 3).unwrap();
        assert_eq!(first.row(2), a.row(2));
    }
}

#[test]
fn zero_samples_and_exhausted_streams() {
    let (sched, model) = setup(PredictionTarget::Epsilon);
    let params = model.init_params(0).values;
    let m = model.bind(&params);
    let out = generate(&m, &sched, &mut NoiseStream::seeded(1, 0), 0).unwrap();
    assert_eq!(out.dim(), (0, 2));

    assert!(matches!(
        generate(&m, &sched, &mut NoiseStream::seeded(1, 2), 3),
        Err(Error::NoiseExhausted { .. })
    ));
    let need = NoiseStream::values_per_sample(2, sched.len());
    let mut short = NoiseStream::recorded(vec![vec![0.1; need - 1]]);
    assert!(matches!(
        generate(&m, &sched, &mut short, 1),
        Err(Error::NoiseExhausted { sample: 0 })
    ));
    let mut exact = NoiseStream::recorded(vec![vec![0.1; need]]);
    assert!(generate(&m, &sched, &mut exact, 1).is_ok());
}

#[test]
fn recorded_and_seeded_streams_agree() {
    let (sched, model) = setup(PredictionTarget::Epsilon);
    let params = model.init_params(2).values;
    let m = model.bind(&params);
    let need = NoiseStream::values_per_sample(2, sched.len());
    let mut seeded = NoiseStream::seeded(5, 2);
    let mut values = vec![vec![0.0; need]; 2];
    for (j, v) in values.iter_mut().enumerate() {
        seeded.fill(j, v).unwrap();
    }
    let a = generate(&m, &sched, &mut NoiseStream::seeded(5, 2), 2).unwrap();
    let b = generate(&m, &sched, &mut NoiseStream::recorded(values), 2).unwrap();
    assert_eq!(a, b);
}

#[test]
fn same_model_twice_is_perfectly_consistent() {
    let (sched, model) = setup(PredictionTarget::Epsilon);
    let p1 = model.init_params(1).values;
    let p2 = model.init_params(2).values;
    let a = model.bind(&p1);
    let b = model.bind(&p2);
    let models: Vec<&dyn Denoiser> = vec![&a, &a, &b];
    let grid = shared_noise_run(
        &models,
        vec!["a".into(), "a-again".into(), "b".into()],
        &sched,
        7,
        6,
    )
    .unwrap();
    assert_eq!(grid.model_samples(0), grid.model_samples(1));
    let report = consistency(&grid, DATA_PEAK).unwrap();
    for row in &report.pairwise {
        assert_eq!(row[0], PSNR_CAP);
        assert!(row[1] < PSNR_CAP);
    }

    let mut bytes = Vec::new();
    grid.write_to(&mut bytes).unwrap();
    let back = SampleGrid::read_from(&bytes[..]).unwrap();
    assert_eq!(back, grid);
    bytes.push(0);
    assert!(SampleGrid::read_from(&bytes[..]).is_err());
}

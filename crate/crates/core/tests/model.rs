use mrsr::model::{load_checkpoint, predict, save_checkpoint, BnPooling, ModalBatch, Model, ModelShape, Variant};
use mrsr::tensor::{Matrix, Mode};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn shape(d: usize) -> ModelShape {
    ModelShape {
        embed_dim: d,
        hidden1: 6,
        hidden2: 5,
        classes: 3,
        dropout_rate: 0.2,
        bn_eps: 1e-5,
        bn_momentum: 0.1,
    }
}

fn normal(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_vec(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect(),
    )
    .unwrap()
}

/// A model that has taken a few train-mode passes so its running statistics
/// are no longer the identity.
fn warmed_model(variant: Variant, seed: u64) -> Model {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = Model::init(variant, shape(4), &mut rng).unwrap();
    for _ in 0..3 {
        let batch = ModalBatch::new(
            Some(normal(6, 4, &mut rng)),
            normal(6, 4, &mut rng),
            vec![true; 6],
            None,
        )
        .unwrap();
        model.forward(&batch, Mode::Train, BnPooling::Pooled, &mut rng).unwrap();
    }
    model
}

fn random_batch(rows: usize, present: &[bool], rng: &mut ChaCha8Rng) -> ModalBatch {
    ModalBatch::new(Some(normal(rows, 4, rng)), normal(rows, 4, rng), present.to_vec(), None).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fusion_is_the_sum_of_modality_logits(seed in any::<u64>(), present in prop::collection::vec(any::<bool>(), 1..8)) {
        let model = warmed_model(Variant::Sr, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let batch = random_batch(present.len(), &present, &mut rng);
        let fused = model.infer(&batch).unwrap();
        let image = model.infer(&ModalBatch::image_only(batch.image().clone(), None).unwrap()).unwrap();
        let text = model.infer(&ModalBatch::image_only(batch.text().unwrap().clone(), None).unwrap()).unwrap();
        for (r, &p) in present.iter().enumerate() {
            for c in 0..fused.cols() {
                let want = if p { image.get(r, c) + text.get(r, c) } else { image.get(r, c) };
                prop_assert!((fused.get(r, c) - want).abs() <= 1e-6, "row {} col {}", r, c);
            }
        }
    }

    #[test]
    fn dropping_one_text_row_leaves_the_others_alone(seed in any::<u64>(), rows in 2usize..8, pick in any::<prop::sample::Index>()) {
        for variant in [Variant::Sr, Variant::Fr] {
            let model = warmed_model(variant, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
            let batch = random_batch(rows, &vec![true; rows], &mut rng);
            let i = pick.index(rows);
            let mut flags = vec![true; rows];
            flags[i] = false;
            let masked = ModalBatch::new(batch.text().cloned(), batch.image().clone(), flags, None).unwrap();
            let (a, b) = (model.infer(&batch).unwrap(), model.infer(&masked).unwrap());
            for r in (0..rows).filter(|&r| r != i) {
                prop_assert_eq!(a.row(r), b.row(r));
            }
        }
    }

    #[test]
    fn predict_ignores_per_row_constant_shifts(
        raw in prop::collection::vec(-128i32..128, 2..40),
        shift in -512i32..512,
    ) {
        // Multiples of 1/8 keep every sum exact in f32.
        let c = 2 + raw.len() % 3;
        let rows = raw.len() / c;
        prop_assume!(rows > 0);
        let data: Vec<f32> = raw[..rows * c].iter().map(|&v| v as f32 / 8.0).collect();
        let logits = Matrix::from_vec(rows, c, data).unwrap();
        let shifted = logits.map(|v| v + shift as f32 / 8.0);
        prop_assert_eq!(predict(&logits).unwrap(), predict(&shifted).unwrap());
    }
}

#[test]
fn one_parameter_set_serves_both_paths() {
    let mut model = warmed_model(Variant::Sr, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = normal(5, 4, &mut rng);
    // Route the same matrix once as image and once as text; the text path's
    // contribution is the fused output minus an all-zero image pass.
    let as_image = ModalBatch::image_only(x.clone(), None).unwrap();
    let zeros = Matrix::zeros(5, 4);
    let as_text = ModalBatch::new(Some(x), zeros, vec![true; 5], None).unwrap();
    let text_part = |m: &Model| {
        let fused = m.infer(&as_text).unwrap();
        let base = m
            .infer(&ModalBatch::image_only(Matrix::zeros(5, 4), None).unwrap())
            .unwrap();
        Matrix::from_vec(5, 3, fused.data().iter().zip(base.data()).map(|(a, b)| a - b).collect()).unwrap()
    };
    let image_before = model.infer(&as_image).unwrap();
    let text_before = text_part(&model);
    for (a, b) in image_before.data().iter().zip(text_before.data()) {
        assert!((a - b).abs() < 1e-5, "text and image paths disagree: {a} vs {b}");
    }

    model.stack_mut().block1.linear.weight.data_mut()[0] += 0.5;
    let image_after = model.infer(&as_image).unwrap();
    let text_after = text_part(&model);
    assert_ne!(image_after, image_before);
    assert_ne!(text_after, text_before);
    for (a, b) in image_after.data().iter().zip(text_after.data()) {
        assert!((a - b).abs() < 1e-5);
    }
}

#[test]
fn checkpoint_file_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    for variant in [Variant::Sr, Variant::Fr] {
        let model = warmed_model(variant, 21);
        let path = dir.path().join(format!("{variant}.mrsr"));
        save_checkpoint(&path, &model, None).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert!(loaded.optimizer.is_none());
        assert_eq!(loaded.model, model);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let batch = random_batch(7, &[true, false, true, true, false, true, true], &mut rng);
        let (a, b) = (model.infer(&batch).unwrap(), loaded.model.infer(&batch).unwrap());
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}

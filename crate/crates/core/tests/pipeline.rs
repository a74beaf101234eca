use ngcc_core::model::{load_checkpoint, save_checkpoint};
use ngcc_core::pit::{train, Generated};
use ngcc_core::scene::store::{write_dataset, StoredDataset};
use ngcc_core::scene::DatasetGenerator;
use ngcc_core::{DatasetSpec, ModelConfig, NgccModel, TrainConfig};
use proptest::prelude::*;
use tempfile::TempDir;

fn small() -> ModelConfig {
    ModelConfig {
        filters: 4,
        head_channels: 3,
        head_width: 4,
        filter_lengths: vec![21, 5],
        head_kernels: vec![3, 1],
        ..Default::default()
    }
}

#[test]
fn stored_frames_match_the_generator() {
    let tmp = TempDir::new().unwrap();
    let spec = DatasetSpec::new(5, vec![0.2, 0.4, 0.4]);
    write_dataset(tmp.path(), &spec, 17).unwrap();
    let stored = StoredDataset::open(tmp.path()).unwrap();
    let g = DatasetGenerator::new(spec).unwrap();
    assert_eq!(stored.len(), 5);
    for i in 0..5 {
        let (a, b) = (g.frame(17, i).unwrap(), stored.frame(i).unwrap());
        assert_eq!(a.labels, b.labels);
        assert_eq!(a.polyphony, b.polyphony);
        for (x, y) in a.channels.iter().flatten().zip(b.channels.iter().flatten()) {
            assert_eq!(*x as f32 as f64, *y);
        }
    }
}

#[test]
fn training_is_reproducible_and_lowers_the_loss() {
    let g = DatasetGenerator::new(DatasetSpec::new(60, vec![0.0, 0.5, 0.5])).unwrap();
    let data = Generated { generator: &g, seed: 5 };
    let config = TrainConfig {
        batch_size: 2,
        epochs: 2,
        ..Default::default()
    };
    let run = || {
        let mut model = NgccModel::new(small(), 1).unwrap();
        let summary = train(&mut model, &data, &config, 2, None).unwrap();
        (model, summary)
    };
    let (a, sa) = run();
    let (b, sb) = run();
    assert_eq!(a.params, b.params);
    assert_eq!(sa, sb);
    assert_eq!(sa.steps, 60);
    assert!(
        sa.final_running_loss < sa.initial_running_loss,
        "{} -> {}",
        sa.initial_running_loss,
        sa.final_running_loss
    );
}

#[test]
fn checkpoint_round_trip_keeps_predictions() {
    let tmp = TempDir::new().unwrap();
    let path = tmp.path().join("ck/model.bin");
    let model = NgccModel::new(small(), 9).unwrap();
    let manifest = save_checkpoint(&path, &model, 9, 0, None).unwrap();
    let (loaded, back) = load_checkpoint(&path).unwrap();
    assert_eq!(manifest, back);

    let frame = DatasetGenerator::new(DatasetSpec::new(1, vec![0.0, 0.0, 1.0]))
        .unwrap()
        .frame(0, 0)
        .unwrap();
    let (p, _) = model.forward(&frame.channels).unwrap();
    let (q, _) = loaded.forward(&frame.channels).unwrap();
    for pair in 0..p.pairs() {
        for track in 0..p.tracks() {
            for (x, y) in p.probs(pair, track).iter().zip(q.probs(pair, track)) {
                assert!((x - y).abs() < 1e-4);
            }
        }
    }

    // a second save of the loaded model is byte-identical
    let again = tmp.path().join("again.bin");
    save_checkpoint(&again, &loaded, 9, 0, None).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn posteriors_are_distributions(seed in 0u64..1000, gain in 1e-3f64..1e3) {
        let model = NgccModel::new(small(), seed).unwrap();
        let frame = DatasetGenerator::new(DatasetSpec::new(1, vec![0.0, 0.5, 0.5]))
            .unwrap()
            .frame(seed, 0)
            .unwrap();
        let channels: Vec<Vec<f64>> = frame.channels.iter().map(|c| c.iter().map(|x| x * gain).collect()).collect();
        let (post, feature) = model.forward(&channels).unwrap();
        prop_assert_eq!(feature.values.shape(), &[3, 6, 13]);
        for pair in 0..post.pairs() {
            for track in 0..post.tracks() {
                let p = post.probs(pair, track);
                prop_assert!(p.iter().all(|x| x.is_finite() && *x >= 0.0));
                prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }
}

use ndarray::{Array1, Array2};

use hybridseg::data::{load_dataset, read_embeddings, save_dataset, synth_generate, write_embeddings, SynthConfig};
use hybridseg::emissions::{DropoutPolicy, EmbeddingSource, EmbeddingTable, InitScheme};
use hybridseg::training::{dev_accuracy, prepare_examples, LearningRates};
use hybridseg::{train, Example, MixedTextRecord, ModelConfig, Segmenter, TrainConfig};

fn corpus(seed: u64, n: usize, delta: f64) -> (Vec<MixedTextRecord>, EmbeddingTable) {
    let (records, file) = synth_generate(&SynthConfig {
        seed,
        num_records: n,
        delta,
        id_prefix: format!("s{seed}"),
        ..Default::default()
    })
    .unwrap();
    (records, file.into_table().unwrap())
}

/// Token rows and labels stacked across records.
fn stack(records: &[MixedTextRecord], table: &EmbeddingTable) -> (Array2<f64>, Vec<usize>) {
    let blocks: Vec<Array2<f64>> = records.iter().map(|r| table.embed_record(r).unwrap()).collect();
    let views: Vec<_> = blocks.iter().map(|b| b.view()).collect();
    let x = ndarray::concatenate(ndarray::Axis(0), &views).unwrap();
    let y = records.iter().flat_map(|r| r.gold_labels.0.iter().copied()).collect();
    (x, y)
}

/// Full-batch logistic regression, written out here as an independent check.
fn logistic(x: &Array2<f64>, y: &[usize]) -> (Array1<f64>, f64) {
    let n = x.nrows() as f64;
    let mut w = Array1::zeros(x.ncols());
    let mut b = 0.0;
    for _ in 0..300 {
        let z = x.dot(&w) + b;
        let r: Array1<f64> = z
            .iter()
            .zip(y)
            .map(|(&z, &t)| 1.0 / (1.0 + (-z).exp()) - t as f64)
            .collect();
        w.scaled_add(-1.0 / n, &x.t().dot(&r));
        b -= r.sum() / n;
    }
    (w, b)
}

fn linear_accuracy(w: &Array1<f64>, b: f64, x: &Array2<f64>, y: &[usize]) -> f64 {
    let z = x.dot(w) + b;
    z.iter().zip(y).filter(|(&z, &t)| usize::from(z > 0.0) == t).count() as f64 / y.len() as f64
}

#[test]
fn wide_separation_is_linearly_separable() {
    let (train_r, train_t) = corpus(1, 100, 5.0);
    let (test_r, test_t) = corpus(2, 100, 5.0);
    let (x, y) = stack(&train_r, &train_t);
    let (w, b) = logistic(&x, &y);
    let (xt, yt) = stack(&test_r, &test_t);
    let acc = linear_accuracy(&w, b, &xt, &yt);
    assert!(acc > 0.99, "linear accuracy {acc}");
}

#[test]
fn zero_separation_gives_chance_accuracy() {
    let (train_r, train_t) = corpus(3, 100, 0.0);
    let (test_r, test_t) = corpus(4, 200, 0.0);
    let (xt, yt) = stack(&test_r, &test_t);
    assert!(yt.len() >= 2000);

    let (x, y) = stack(&train_r, &train_t);
    let (w, b) = logistic(&x, &y);
    let acc = linear_accuracy(&w, b, &xt, &yt);
    assert!((acc - 0.5).abs() < 0.05, "linear accuracy {acc}");

    let model = Segmenter::new(
        ModelConfig {
            input_dim: 8,
            hidden_dim: 4,
            num_layers: 1,
            num_labels: 2,
            head_init: InitScheme::Xavier,
            embedding: EmbeddingSource::FileBacked,
        },
        3,
    )
    .unwrap();
    let config = TrainConfig {
        learning_rates: LearningRates::Uniform(1e-2),
        dropout: DropoutPolicy::off(),
        ..Default::default()
    };
    let train_set: Vec<Example> = prepare_examples(&train_r, &train_t, 512).unwrap();
    let test_set: Vec<Example> = prepare_examples(&test_r, &test_t, 512).unwrap();
    let (model, _) = train(model, &train_set, &[], &config, |_| {}).unwrap();
    let acc = dev_accuracy(&model, &test_set).unwrap().unwrap();
    assert!((acc - 0.5).abs() < 0.05, "segmenter accuracy {acc}");
}

#[test]
fn hundred_records_round_trip_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let (records, file) = synth_generate(&SynthConfig {
        num_records: 100,
        ..Default::default()
    })
    .unwrap();
    let data = dir.path().join("d.jsonl");
    let emb = dir.path().join("d.seqe");
    save_dataset(&records, &data).unwrap();
    write_embeddings(&emb, &file).unwrap();
    assert_eq!(load_dataset(&data).unwrap(), records);
    let back = read_embeddings(&emb).unwrap();
    assert_eq!(back.dim, file.dim);
    for ((ka, a), (kb, b)) in back.sequences.iter().zip(&file.sequences) {
        assert_eq!(ka, kb);
        assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}

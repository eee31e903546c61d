use std::fs;

use incrlearn::checkpoint::{from_bytes, load_checkpoint, save_checkpoint, to_bytes};
use incrlearn::data::{
    gen_synthetic, load_delimited, load_delimited_pair, write_delimited, DelimitedSchema, SplitSource, SyntheticSpec,
};
use incrlearn::net::NetSpec;
use incrlearn::trainer::{incremental_train, predict, BatchClass, ClassBatch, LearnerState};
use incrlearn::{Error, TrainConfig};

#[test]
fn two_rows_two_classes() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("d.csv");
    fs::write(&p, "label,x0,x1\ncat,1,2\ndog,3,4\n").unwrap();
    let ds = load_delimited(
        &p,
        &DelimitedSchema {
            delimiter: b',',
            split: SplitSource::AllTrain,
        },
    )
    .unwrap();
    assert_eq!(ds.num_classes(), 2);
    assert!(ds.classes.iter().all(|c| c.train.len() == 1));
    assert_eq!(ds.classes[1].train[0], vec![3.0, 4.0]);
}

#[test]
fn tab_delimited_pair() {
    let dir = tempfile::tempdir().unwrap();
    let (tr, te) = (dir.path().join("train.tsv"), dir.path().join("test.tsv"));
    fs::write(&tr, "label\ta\tb\nx\t1\t2\ny\t3\t4\n").unwrap();
    fs::write(&te, "label\ta\tb\ny\t5\t6\n").unwrap();
    let ds = load_delimited_pair(&tr, &te, b'\t').unwrap();
    assert_eq!(ds.classes[1].test, vec![vec![5.0, 6.0]]);

    fs::write(&te, "label\ta\ny\t5\n").unwrap();
    assert!(matches!(
        load_delimited_pair(&tr, &te, b'\t'),
        Err(Error::RowShape { line: 2, expected: 2, got: 1 })
    ));
}

#[test]
fn header_only_is_an_empty_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("d.csv");
    fs::write(&p, "split,label,x0\n").unwrap();
    assert!(matches!(
        load_delimited(&p, &DelimitedSchema::default()),
        Err(Error::EmptyDataset)
    ));
}

#[test]
fn generated_data_round_trips_through_text() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("d.csv");
    let mut spec = SyntheticSpec::toy_ibench(4);
    spec.classes = 3;
    spec.train_per_class = 10;
    spec.test_per_class = 4;
    let ds = gen_synthetic(&spec).unwrap();
    write_delimited(&ds, &p).unwrap();
    assert_eq!(load_delimited(&p, &DelimitedSchema::default()).unwrap(), ds);
}

#[test]
fn missing_file_is_an_io_error() {
    assert!(matches!(
        load_delimited("/nonexistent/d.csv", &DelimitedSchema::default()),
        Err(Error::Io { .. })
    ));
}

#[test]
fn checkpoint_preserves_decisions_and_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = SyntheticSpec::toy_ibench(6);
    spec.classes = 3;
    spec.train_per_class = 40;
    spec.test_per_class = 10;
    let ds = gen_synthetic(&spec).unwrap();
    let net = NetSpec::new(ds.input_dim, vec![16], 8).unwrap();
    let mut state = LearnerState::new(&net, Some(12), 3).unwrap();
    let cfg = TrainConfig::with_epochs(3);
    for ids in [&[0usize, 1][..], &[2]] {
        let b = ClassBatch::new(
            ids.iter()
                .map(|&c| BatchClass {
                    label: &ds.classes[c].label,
                    samples: &ds.classes[c].train,
                })
                .collect(),
        );
        state = incremental_train(state, &b, &cfg).unwrap();
    }
    let p = dir.path().join("s.ckpt");
    save_checkpoint(&state, &p).unwrap();
    let loaded = load_checkpoint(&p).unwrap();
    assert_eq!(loaded, state);
    assert_eq!(to_bytes(&loaded), fs::read(&p).unwrap());
    for c in &ds.classes {
        for x in &c.test {
            assert_eq!(predict(&loaded, x).unwrap(), predict(&state, x).unwrap());
        }
    }
    // No partial state from a damaged file.
    let bytes = fs::read(&p).unwrap();
    assert!(from_bytes(&bytes[..bytes.len() / 2]).is_err());
}

use std::ffi::{CStr, CString};
use std::ptr;

use incrlearn_ffi::*;

fn options() -> IclTrainOptions {
    let mut o = icl_train_options_default();
    o.epochs = 5;
    o.minibatch_size = 32;
    o.learning_rate = 0.5;
    o
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(icl_last_error()).to_string_lossy().into_owned() }
}

fn dataset() -> *mut IclDataset {
    let mut ds = ptr::null_mut();
    let s = unsafe { icl_dataset_synthetic(4, 8, 1, 5.0, 0.5, 30, 10, 1, &mut ds) };
    assert_eq!(s, IclStatus::Ok);
    ds
}

fn learner(strategy: &str) -> *mut IclLearner {
    let name = CString::new(strategy).unwrap();
    let hidden = [16usize];
    let mut l = ptr::null_mut();
    let s = unsafe { icl_learner_new(name.as_ptr(), 8, hidden.as_ptr(), 1, 8, 12, 7, &options(), &mut l) };
    assert_eq!(s, IclStatus::Ok, "{}", last_error());
    l
}

#[test]
fn defaults_follow_the_reference_schedule() {
    let o = icl_train_options_default();
    assert_eq!((o.epochs, o.minibatch_size), (70, 128));
    assert_eq!((o.learning_rate, o.lr_drop_factor, o.weight_decay), (2.0, 5.0, 1e-5));
}

#[test]
fn train_predict_save_load() {
    let ds = dataset();
    let l = learner("icarl");
    unsafe {
        assert_eq!(icl_dataset_num_classes(ds), 4);
        assert_eq!(icl_dataset_input_dim(ds), 8);
        assert_eq!(icl_learner_train_classes(l, ds, [0usize, 1].as_ptr(), 2), IclStatus::Ok);
        assert_eq!(icl_learner_train_classes(l, ds, [2usize].as_ptr(), 1), IclStatus::Ok);
        assert_eq!(icl_learner_num_classes(l), 3);

        let mut buf = [0 as std::ffi::c_char; 16];
        let mut len = 0;
        assert_eq!(icl_learner_class_label(l, 2, buf.as_mut_ptr(), 16, &mut len), IclStatus::Ok);
        assert_eq!(CStr::from_ptr(buf.as_ptr()).to_str().unwrap(), "c2");
        assert_eq!(icl_learner_class_label(l, 2, buf.as_mut_ptr(), 2, &mut len), IclStatus::InvalidArgument);
        assert_eq!(len, 2);

        let dir = tempfile::tempdir().unwrap();
        let path = CString::new(dir.path().join("l.ckpt").to_str().unwrap()).unwrap();
        assert_eq!(icl_learner_save(l, path.as_ptr()), IclStatus::Ok);
        let mut back = ptr::null_mut();
        let name = CString::new("icarl").unwrap();
        assert_eq!(icl_learner_load(path.as_ptr(), name.as_ptr(), &options(), &mut back), IclStatus::Ok);

        let mut x = [0.0; 8];
        let mut correct = 0;
        for class in 0..3 {
            for i in 0..icl_dataset_test_count(ds, class) {
                assert_eq!(icl_dataset_test_sample(ds, class, i, x.as_mut_ptr(), 8), IclStatus::Ok);
                let (mut a, mut b) = (0, 0);
                assert_eq!(icl_learner_predict(l, x.as_ptr(), 8, &mut a), IclStatus::Ok);
                assert_eq!(icl_learner_predict(back, x.as_ptr(), 8, &mut b), IclStatus::Ok);
                assert_eq!(a, b);
                correct += usize::from(a == class);
            }
        }
        assert!(correct >= 20, "{correct}/30");

        // The reloaded learner keeps training identically.
        assert_eq!(icl_learner_train_classes(l, ds, [3usize].as_ptr(), 1), IclStatus::Ok);
        assert_eq!(icl_learner_train_classes(back, ds, [3usize].as_ptr(), 1), IclStatus::Ok);
        let (p1, p2) = (dir.path().join("a.ckpt"), dir.path().join("b.ckpt"));
        let (c1, c2) = (CString::new(p1.to_str().unwrap()).unwrap(), CString::new(p2.to_str().unwrap()).unwrap());
        assert_eq!(icl_learner_save(l, c1.as_ptr()), IclStatus::Ok);
        assert_eq!(icl_learner_save(back, c2.as_ptr()), IclStatus::Ok);
        assert_eq!(std::fs::read(p1).unwrap(), std::fs::read(p2).unwrap());

        icl_learner_free(back);
        icl_learner_free(l);
        icl_dataset_free(ds);
    }
}

#[test]
fn raw_batches() {
    let l = learner("finetuning");
    let labels = [CString::new("a").unwrap(), CString::new("b").unwrap()];
    let label_ptrs = [labels[0].as_ptr(), labels[1].as_ptr()];
    let counts = [3usize, 2];
    let mut samples = vec![0.0; 5 * 8];
    for (i, v) in samples.iter_mut().enumerate() {
        *v = if i < 24 { 1.0 + (i % 8) as f64 } else { -1.0 - (i % 8) as f64 };
    }
    unsafe {
        assert_eq!(
            icl_learner_train_batch(l, label_ptrs.as_ptr(), counts.as_ptr(), 2, samples.as_ptr()),
            IclStatus::Ok,
            "{}",
            last_error()
        );
        assert_eq!(icl_learner_num_classes(l), 2);
        let mut y = 9;
        assert_eq!(icl_learner_predict(l, samples.as_ptr(), 8, &mut y), IclStatus::Ok);
        assert!(y < 2);
        // Same label again is a schedule error.
        assert_eq!(
            icl_learner_train_batch(l, label_ptrs.as_ptr(), counts.as_ptr(), 1, samples.as_ptr()),
            IclStatus::Schedule
        );
        assert!(last_error().contains("'a'"));
        icl_learner_free(l);
    }
}

#[test]
fn errors_map_to_status_codes() {
    unsafe {
        let mut l = ptr::null_mut();
        let bad = CString::new("ewc").unwrap();
        let hidden = [4usize];
        assert_eq!(
            icl_learner_new(bad.as_ptr(), 8, hidden.as_ptr(), 1, 4, 10, 1, &options(), &mut l),
            IclStatus::InvalidArgument
        );
        assert!(last_error().contains("icarl"));
        let ncm = CString::new("ncm").unwrap();
        assert_eq!(
            icl_learner_new(ncm.as_ptr(), 8, hidden.as_ptr(), 1, 4, 10, 1, &options(), &mut l),
            IclStatus::InvalidArgument
        );
        assert_eq!(
            icl_learner_new(ptr::null(), 8, hidden.as_ptr(), 1, 4, 10, 1, &options(), &mut l),
            IclStatus::NullPointer
        );

        let l = learner("icarl");
        let mut y = 0;
        let x = [0.0; 8];
        assert_eq!(icl_learner_predict(l, x.as_ptr(), 8, &mut y), IclStatus::NoClasses);
        assert_eq!(icl_learner_predict(l, x.as_ptr(), 3, &mut y), IclStatus::NoClasses);

        let ds = dataset();
        assert_eq!(icl_learner_train_classes(l, ds, [0usize, 1].as_ptr(), 2), IclStatus::Ok);
        assert_eq!(icl_learner_predict(l, x.as_ptr(), 3, &mut y), IclStatus::Shape);
        // K=1 cannot hold one exemplar for each of two classes.
        let tiny = CString::new("icarl").unwrap();
        let mut small = ptr::null_mut();
        assert_eq!(
            icl_learner_new(tiny.as_ptr(), 8, hidden.as_ptr(), 1, 4, 1, 1, &options(), &mut small),
            IclStatus::Ok
        );
        assert_eq!(icl_learner_train_classes(small, ds, [0usize, 1].as_ptr(), 2), IclStatus::Budget);

        let missing = CString::new("/nonexistent/x.ckpt").unwrap();
        let mut out = ptr::null_mut();
        assert_eq!(icl_learner_load(missing.as_ptr(), tiny.as_ptr(), &options(), &mut out), IclStatus::Io);

        let dir = tempfile::tempdir().unwrap();
        let junk = dir.path().join("junk.ckpt");
        std::fs::write(&junk, b"not a checkpoint at all, just bytes").unwrap();
        let junk = CString::new(junk.to_str().unwrap()).unwrap();
        assert_eq!(icl_learner_load(junk.as_ptr(), tiny.as_ptr(), &options(), &mut out), IclStatus::Checkpoint);

        icl_learner_free(small);
        icl_learner_free(l);
        icl_dataset_free(ds);
        icl_learner_free(ptr::null_mut());
        icl_dataset_free(ptr::null_mut());
    }
}

use std::ffi::{CStr, CString};
use std::ptr;

use mapsam2::model::{save_checkpoint, Model, ModelConfig};
use mapsam2_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(mapsam2_last_error()) }.to_string_lossy().into_owned()
}

#[test]
fn header_declares_the_api() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/mapsam2.h")).unwrap();
    for name in [
        "mapsam2_model_load",
        "mapsam2_segment_video",
        "mapsam2_bank_update",
        "mapsam2_eval_video",
        "typedef struct Mapsam2Bank Mapsam2Bank",
        "MAPSAM2_STATUS_OK = 0",
    ] {
        assert!(header.contains(name), "{name} missing from header");
    }
}

#[test]
fn bank_round_trip() {
    let mut bank = ptr::null_mut();
    unsafe {
        assert_eq!(mapsam2_bank_new(2, Mapsam2Policy::Fifo, &mut bank), Mapsam2Status::Ok);
        let mut u = Mapsam2Update { kind: Mapsam2UpdateKind::Rejected, evicted_tick: 0 };
        for v in [[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]] {
            assert_eq!(mapsam2_bank_update(bank, v.as_ptr(), 2, 1.0, 0.5, &mut u), Mapsam2Status::Ok);
        }
        assert_eq!((u.kind, u.evicted_tick), (Mapsam2UpdateKind::Evicted, 0));
        assert_eq!(mapsam2_bank_len(bank), 2);
        let mut ticks = [0u64; 2];
        assert_eq!(mapsam2_bank_ticks(bank, ticks.as_mut_ptr(), 2), Mapsam2Status::Ok);
        assert_eq!(ticks, [1, 2]);
        let mut p = [0.0; 2];
        assert_eq!(mapsam2_bank_probabilities(bank, [0.0, 1.0].as_ptr(), 2, p.as_mut_ptr(), 2), Mapsam2Status::Ok);
        assert!((p[0] + p[1] - 1.0).abs() < 1e-12 && p[0] > p[1]);
        assert_eq!(mapsam2_bank_probabilities(bank, [0.0, 1.0].as_ptr(), 2, p.as_mut_ptr(), 1), Mapsam2Status::BufferTooSmall);
        assert_eq!(mapsam2_bank_update(bank, [1.0, 0.0, 0.0].as_ptr(), 3, 1.0, 0.5, ptr::null_mut()), Mapsam2Status::InvalidArgument);
        assert!(last_error().contains("dimension"));
        assert_eq!(mapsam2_bank_update(bank, [0.0, 0.0].as_ptr(), 2, 1.0, 0.5, ptr::null_mut()), Mapsam2Status::InvalidArgument);
        mapsam2_bank_free(bank);

        assert_eq!(mapsam2_bank_new(1, Mapsam2Policy::SelfSorting, &mut bank), Mapsam2Status::Ok);
        assert_eq!(mapsam2_bank_update(bank, [1.0].as_ptr(), 1, 0.2, 0.5, &mut u), Mapsam2Status::Ok);
        assert_eq!(u.kind, Mapsam2UpdateKind::Rejected);
        mapsam2_bank_free(bank);
        assert_eq!(mapsam2_bank_new(0, Mapsam2Policy::Fifo, &mut bank), Mapsam2Status::InvalidArgument);
    }
}

#[test]
fn null_handles_are_reported() {
    unsafe {
        assert_eq!(mapsam2_bank_len(ptr::null()), 0);
        assert_eq!(mapsam2_bank_update(ptr::null_mut(), [1.0].as_ptr(), 1, 1.0, 0.0, ptr::null_mut()), Mapsam2Status::NullPointer);
        assert!(last_error().contains("bank"));
        assert_eq!(mapsam2_model_load(ptr::null(), ptr::null_mut()), Mapsam2Status::NullPointer);
        mapsam2_model_free(ptr::null_mut());
        mapsam2_bank_free(ptr::null_mut());
        assert!(!CStr::from_ptr(mapsam2_version()).to_bytes().is_empty());
    }
}

#[test]
fn eval_of_ground_truth_is_perfect() {
    let (h, w) = (4, 4);
    let mut gt = vec![0u16; 2 * h * w];
    gt[0] = 1;
    gt[5] = 2;
    gt[16] = 1;
    gt[31] = 3;
    let mut s = Mapsam2Scores::default();
    unsafe {
        assert_eq!(mapsam2_eval_video(gt.as_ptr(), gt.as_ptr(), 2, h, w, &mut s), Mapsam2Status::Ok);
    }
    assert_eq!((s.precision, s.recall, s.f1, s.tp, s.fp, s.fn_), (1.0, 1.0, 1.0, 3, 0, 0));
    let empty = vec![0u16; 2 * h * w];
    unsafe {
        assert_eq!(mapsam2_eval_video(empty.as_ptr(), gt.as_ptr(), 2, h, w, &mut s), Mapsam2Status::Ok);
    }
    assert_eq!((s.tp, s.fn_, s.f1), (0, 3, 0.0));
}

#[test]
fn load_and_segment() {
    let tmp = tempfile::tempdir().unwrap();
    let ck = tmp.path().join("ck.json");
    let cfg = ModelConfig {
        input_size: 32,
        patch: 8,
        d_model: 16,
        n_heads: 2,
        lora_rank: 2,
        ..ModelConfig::default()
    };
    save_checkpoint(&Model::new(cfg).unwrap(), &ck).unwrap();
    let path = CString::new(ck.to_str().unwrap()).unwrap();
    let missing = CString::new(tmp.path().join("nope.json").to_str().unwrap()).unwrap();
    let mut model = ptr::null_mut();
    unsafe {
        assert_eq!(mapsam2_model_load(missing.as_ptr(), &mut model), Mapsam2Status::NotFound);
        assert_eq!(mapsam2_model_load(path.as_ptr(), &mut model), Mapsam2Status::Ok);
        assert_eq!(mapsam2_model_input_size(model), 32);
        let frames: Vec<u8> = (0..2 * 32 * 32).map(|i| if (i % 32) < 10 && (i / 32) % 32 < 10 { 20 } else { 230 }).collect();
        let boxes = [Mapsam2Box { id: 4, x0: 0, y0: 0, x1: 10, y1: 10 }, Mapsam2Box { id: 2, x0: 5, y0: 5, x1: 20, y1: 20 }];
        let mut labels = vec![7u16; 2 * 32 * 32];
        assert_eq!(mapsam2_segment_video(model, frames.as_ptr(), 2, boxes.as_ptr(), 2, true, labels.as_mut_ptr()), Mapsam2Status::Ok);
        assert!(labels.iter().all(|l| [0, 2, 4].contains(l)));
        let bad = [Mapsam2Box { id: 1, x0: 5, y0: 5, x1: 5, y1: 9 }];
        assert_eq!(mapsam2_segment_video(model, frames.as_ptr(), 2, bad.as_ptr(), 1, true, labels.as_mut_ptr()), Mapsam2Status::InvalidArgument);
        assert!(last_error().contains("prompt 1"));
        mapsam2_model_free(model);
    }
}

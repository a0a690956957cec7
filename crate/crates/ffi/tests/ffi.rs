use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use labelfree::agent::{save_checkpoint, Agent, AgentConfig, CoreKind, RewardInput};
use labelfree_ffi::*;

fn agent_file(dir: &Path) -> PathBuf {
    let cfg = AgentConfig {
        obs_dim: 3,
        action_count: 2,
        encoder_widths: vec![8],
        embed_dim: 8,
        core: CoreKind::Transformer,
        core_depth: 1,
        core_heads: 2,
        ff_dim: 16,
        context_len: 8,
        actor_head_widths: vec![8],
        critic_head_widths: vec![8],
        bins: None,
        ensemble_size: 2,
        gamma_count: 2,
        reward_input: RewardInput::Symlog,
    };
    let path = dir.join("agent.lfck");
    save_checkpoint(&path, &Agent::new(cfg, 3).unwrap(), "").unwrap();
    path
}

fn last_error() -> String {
    let p = lf_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn symlog_round_trip_and_domain_errors() {
    let (mut b, mut y) = (0.0, 0.0);
    unsafe {
        assert_eq!(lf_symlog(-250.0, &mut b), LfStatus::Ok);
        assert_eq!(lf_symexp(b, &mut y), LfStatus::Ok);
        assert!((y + 250.0).abs() < 1e-9);
        assert_eq!(lf_symlog(f64::NAN, &mut b), LfStatus::Domain);
        assert!(last_error().contains("domain"));
        assert_eq!(lf_symexp(1.0, ptr::null_mut()), LfStatus::NullPointer);
    }
}

#[test]
fn bins_encode_decode() {
    unsafe {
        let mut bins = ptr::null_mut();
        assert_eq!(lf_bins_new(64, -100.0, 100.0, true, &mut bins), LfStatus::Ok);
        assert_eq!(lf_bins_count(bins), 64);
        let mut p = vec![0.0; 64];
        assert_eq!(lf_bins_encode(bins, 3.25, p.as_mut_ptr(), 64), LfStatus::Ok);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(p.iter().filter(|v| **v > 0.0).count(), 2);
        let mut y = 0.0;
        assert_eq!(lf_bins_decode(bins, p.as_ptr(), 64, &mut y), LfStatus::Ok);
        assert!((y - 3.25).abs() < 1e-9);
        assert_eq!(lf_bins_encode(bins, 1.0, p.as_mut_ptr(), 10), LfStatus::InvalidArgument);
        p[0] += 0.5;
        assert_eq!(lf_bins_decode(bins, p.as_ptr(), 64, &mut y), LfStatus::Domain);
        lf_bins_free(bins);

        let mut bad = ptr::null_mut();
        assert_eq!(lf_bins_new(1, 0.0, 1.0, false, &mut bad), LfStatus::Config);
        assert!(bad.is_null());
        lf_bins_free(ptr::null_mut());
    }
}

#[test]
fn agent_handle_acts_and_reports_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(agent_file(dir.path()).to_str().unwrap()).unwrap();
    unsafe {
        let mut agent = ptr::null_mut();
        assert_eq!(lf_agent_load(path.as_ptr(), 11, &mut agent), LfStatus::Ok);
        assert_eq!(lf_agent_obs_dim(agent), 3);
        assert_eq!(lf_agent_action_count(agent), 2);
        let obs = [0.1, -0.2, 0.3];
        let mut a = 99;
        let mut prev = -1;
        let mut greedy_run = Vec::new();
        for _ in 0..12 {
            assert_eq!(lf_agent_step(agent, obs.as_ptr(), 3, prev, 1.0, false, true, &mut a), LfStatus::Ok);
            assert!(a < 2);
            greedy_run.push(a);
            prev = a as i32;
        }
        // Greedy play is a function of the history only.
        assert_eq!(lf_agent_reset(agent), LfStatus::Ok);
        prev = -1;
        for expected in &greedy_run {
            assert_eq!(lf_agent_step(agent, obs.as_ptr(), 3, prev, 1.0, false, true, &mut a), LfStatus::Ok);
            assert_eq!(a, *expected);
            prev = a as i32;
        }
        assert_eq!(lf_agent_step(agent, obs.as_ptr(), 2, -1, 0.0, false, false, &mut a), LfStatus::InvalidArgument);
        assert_eq!(lf_agent_step(agent, obs.as_ptr(), 3, 5, 0.0, false, false, &mut a), LfStatus::InvalidArgument);
        assert_eq!(lf_agent_step(agent, obs.as_ptr(), 3, 0, f64::INFINITY, false, false, &mut a), LfStatus::InvalidArgument);
        lf_agent_free(agent);

        let missing = CString::new(dir.path().join("missing").to_str().unwrap()).unwrap();
        let mut none = ptr::null_mut();
        assert_eq!(lf_agent_load(missing.as_ptr(), 0, &mut none), LfStatus::Io);
        assert!(none.is_null());
        let junk = dir.path().join("junk");
        std::fs::write(&junk, b"not a checkpoint").unwrap();
        let junk = CString::new(junk.to_str().unwrap()).unwrap();
        assert_eq!(lf_agent_load(junk.as_ptr(), 0, &mut none), LfStatus::Format);
    }
}

#[test]
fn generated_header_declares_the_api() {
    let header = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/labelfree.h")).unwrap();
    for name in [
        "lf_last_error_message",
        "lf_symlog",
        "lf_symexp",
        "lf_bins_new",
        "lf_bins_encode",
        "lf_bins_decode",
        "lf_bins_free",
        "lf_agent_load",
        "lf_agent_step",
        "lf_agent_reset",
        "lf_agent_free",
        "LF_STATUS_OK",
        "typedef struct LfAgent LfAgent",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }
}

/// Compiles a C program against the header and the static library.
#[test]
fn c_program_links_and_runs() {
    let manifest = Path::new(env!("CARGO_MANIFEST_DIR"));
    let profile_dir = std::env::current_exe().unwrap().parent().unwrap().parent().unwrap().to_path_buf();
    if Command::new("cc").arg("--version").output().is_err() {
        eprintln!("skipping: no C compiler");
        return;
    }
    // Test builds only produce the rlib; ask cargo for the static library.
    let built = Command::new(env!("CARGO"))
        .args(["build", "--quiet", "-p", "labelfree-ffi", "--lib"])
        .env("CARGO_TARGET_DIR", profile_dir.parent().unwrap())
        .current_dir(manifest)
        .status()
        .unwrap();
    assert!(built.success());
    let lib = profile_dir.join("liblabelfree_ffi.a");
    let dir = tempfile::tempdir().unwrap();
    let exe = dir.path().join("smoke");
    let status = Command::new("cc")
        .arg(manifest.join("tests/c/smoke.c"))
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success());
    let ckpt = agent_file(dir.path());
    let out = Command::new(&exe).arg(&ckpt).output().unwrap();
    assert!(out.status.success(), "exit {:?}, stderr {}", out.status, String::from_utf8_lossy(&out.stderr));
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "ok");
}

use std::path::{Path, PathBuf};

use super::*;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures/audit")
        .join(name)
}

fn run(name: &str) -> AuditReport {
    let s = snapshot(&fixture(name)).unwrap();
    audit(&s, &AuditTarget::default())
}

/// Copies a fixture into a scratch directory so remediation can write.
fn scratch(name: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let src = fixture(name);
    for entry in walkdir::WalkDir::new(&src) {
        let entry = entry.unwrap();
        let rel = entry.path().strip_prefix(&src).unwrap();
        let dst = dir.path().join(rel);
        if entry.file_type().is_dir() {
            std::fs::create_dir_all(&dst).unwrap();
        } else {
            std::fs::copy(entry.path(), &dst).unwrap();
        }
    }
    dir
}

#[test]
fn paper_setup_is_clean() {
    let s = snapshot(&fixture("paper-setup")).unwrap();
    assert!(s.unreadable.is_empty(), "{:?}", s.unreadable);
    let r = audit(&s, &AuditTarget::default());
    assert_eq!(r.target_cpus, [1]);
    assert_eq!(r.isolated_cpus, [1]);
    assert_eq!(r.verdict, Verdict::Clean, "{}", r.render_table());
    assert!(r.rt_throttling_disabled());
    assert!(!r.hyperthreading_on());
    assert!(r.check(11).unwrap().security_warning.is_some());
    assert_eq!(r.status(14), Some(CheckStatus::NotApplicable));
}

#[test]
fn debian_default_is_unusable() {
    let r = run("debian-default");
    assert_eq!(r.verdict, Verdict::Unusable);
    for n in [1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 13] {
        assert_eq!(r.status(n), Some(CheckStatus::Fail), "check {n}");
    }
    assert_eq!(r.status(11), Some(CheckStatus::Pass));
    assert_eq!(r.status(12), Some(CheckStatus::Unknown));
    assert!(r.hyperthreading_on());
}

#[test]
fn missing_prefetcher_interface_is_unknown() {
    let s = snapshot(&fixture("debian-default")).unwrap();
    assert!(s.prefetch_msr.is_empty());
    assert!(s.unreadable.iter().any(|p| p.ends_with("msr")));
}

#[test]
fn partial_isolation_is_degraded() {
    let r = run("partial-isolation");
    assert_eq!(r.verdict, Verdict::Degraded);
    let failing: Vec<u32> = r.failed().map(|c| c.number).collect();
    assert_eq!(failing, [6, 8]);
    assert_eq!(r.status(12), Some(CheckStatus::Unknown));
}

#[test]
fn kpti_without_pcid_fails() {
    let r = run("kpti-on-no-pcid");
    assert_eq!(r.status(11), Some(CheckStatus::Fail));
    assert_eq!(r.verdict, Verdict::Degraded);
    let c = r.check(11).unwrap();
    assert!(c.requires_reboot);
    assert!(c.remediation.as_deref().unwrap().contains("pti=off"));
}

#[test]
fn isolating_cpu0_fails_isolation() {
    let s = snapshot(&fixture("cpu0-isolated")).unwrap();
    let r = audit(
        &s,
        &AuditTarget {
            target_cpus: vec![0],
            ..Default::default()
        },
    );
    let c = r.check(1).unwrap();
    assert_eq!(c.status, CheckStatus::Fail);
    assert!(c.observed.contains("CPU0"), "{}", c.observed);
    assert_eq!(r.verdict, Verdict::Unusable);
}

#[test]
fn every_check_is_explained() {
    for name in ["paper-setup", "debian-default", "partial-isolation", "kpti-on-no-pcid"] {
        let r = run(name);
        assert_eq!(r.checks.len(), CHECK_COUNT as usize + 1);
        for c in &r.checks {
            assert!(!c.error_sources.is_empty());
            assert!(c.error_sources.iter().all(|s| error_source(s).is_some()));
            if c.status == CheckStatus::Fail {
                assert!(c.remediation.as_deref().is_some_and(|r| !r.is_empty()), "{name}: {}", c.id);
            }
        }
        for n in [2, 7] {
            if let Some(c) = r.check(n).filter(|c| c.status == CheckStatus::Fail) {
                let text = c.remediation.as_deref().unwrap();
                assert!(text.contains("BIOS") || text.contains("kernel build"), "{text}");
            }
        }
    }
}

#[test]
fn audit_is_pure_and_hash_ignores_location() {
    let a = snapshot(&fixture("paper-setup")).unwrap();
    let copy = scratch("paper-setup");
    let b = snapshot(copy.path()).unwrap();
    assert_eq!(a.hash(), b.hash());
    let t = AuditTarget::default();
    assert_eq!(audit(&a, &t).checks, audit(&a, &t).checks);
    assert_ne!(a.hash(), snapshot(&fixture("debian-default")).unwrap().hash());
}

#[test]
fn prefetcher_mode_changes_expectation() {
    let s = snapshot(&fixture("paper-setup")).unwrap();
    let off = audit(
        &s,
        &AuditTarget {
            prefetcher_mode: PrefetcherMode::Off,
            ..Default::default()
        },
    );
    assert_eq!(off.status(12), Some(CheckStatus::Fail));
    let both = audit(
        &s,
        &AuditTarget {
            prefetcher_mode: PrefetcherMode::Both,
            ..Default::default()
        },
    );
    assert_eq!(both.status(12), Some(CheckStatus::Pass));
}

#[test]
fn bios_pinning_satisfies_frequency_check() {
    let s = snapshot(&fixture("debian-default")).unwrap();
    let r = audit(
        &s,
        &AuditTarget {
            bios_frequency_pinned: true,
            ..Default::default()
        },
    );
    assert_eq!(r.status(10), Some(CheckStatus::Pass));
}

#[test]
fn dry_run_writes_nothing() {
    let dir = scratch("debian-default");
    let before = snapshot(dir.path()).unwrap().hash();
    let r = audit(&snapshot(dir.path()).unwrap(), &AuditTarget::default());
    let steps = remediate(&r, false);
    assert!(!steps.is_empty());
    assert!(steps.iter().all(|s| matches!(
        s.outcome,
        ActionOutcome::DryRun | ActionOutcome::InstructionOnly { .. }
    )));
    assert!(steps.windows(2).all(|w| w[0].check <= w[1].check));
    assert_eq!(snapshot(dir.path()).unwrap().hash(), before);
}

#[test]
fn apply_fixes_runtime_settings() {
    let dir = scratch("debian-default");
    let r = audit(&snapshot(dir.path()).unwrap(), &AuditTarget::default());
    let steps = remediate(&r, true);
    for s in &steps {
        match s.check {
            3 | 9 | 10 | 13 => assert_eq!(s.outcome, ActionOutcome::Applied, "{s:?}"),
            _ => assert_eq!(
                s.outcome,
                ActionOutcome::InstructionOnly {
                    requires_reboot: true
                },
                "{s:?}"
            ),
        }
    }
    let again = audit(&snapshot(dir.path()).unwrap(), &AuditTarget::default());
    for n in [3, 9, 10, 13] {
        assert_eq!(again.status(n), Some(CheckStatus::Pass), "check {n}");
    }
    assert_eq!(again.status(2), Some(CheckStatus::Fail));
}

#[test]
fn apply_writes_prefetcher_msr() {
    let dir = scratch("paper-setup");
    let target = AuditTarget {
        prefetcher_mode: PrefetcherMode::Off,
        ..Default::default()
    };
    let r = audit(&snapshot(dir.path()).unwrap(), &target);
    let steps = remediate(&r, true);
    assert_eq!(steps.len(), 1);
    assert_eq!(steps[0].outcome, ActionOutcome::Applied);
    let s = snapshot(dir.path()).unwrap();
    assert_eq!(s.prefetch_msr[&1], 0xf);
    assert_eq!(audit(&s, &target).status(12), Some(CheckStatus::Pass));
}

#[test]
fn snapshot_never_writes() {
    let root = fixture("paper-setup");
    let digest = || {
        let mut all = Vec::new();
        for e in walkdir::WalkDir::new(&root).sort_by_file_name() {
            let e = e.unwrap();
            if e.file_type().is_file() {
                all.push((e.path().to_path_buf(), std::fs::read(e.path()).unwrap()));
            }
        }
        all
    };
    let before = digest();
    let _ = snapshot(&root).unwrap();
    assert_eq!(digest(), before);
}

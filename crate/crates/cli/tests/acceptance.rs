//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! fails if any criterion does.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde_json::Value;

use bootshuffle::attacks::{
    bruteforce_branch_key, capture_otp_hash, expected_trials, shuffle_keysector, BruteforceConfig,
    ShufflePlan, Stage1Options,
};
use bootshuffle::bootchain::{
    decode_instruction, is_branch, BootOutcome, Instruction, PanicReason, Stage, FIRM_LOAD_BASE,
};
use bootshuffle::console::{Console, ConsoleConfig, RebootMode};
use bootshuffle::crypto;
use bootshuffle::firm::HEADER_LEN;
use bootshuffle::hw::Direction;
use bootshuffle::nand::{FirmSlot, Keysector, NandImage};
use bootshuffle::vendor::{Vendor, DEFAULT_VENDOR_SEED};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(elapsed: Duration, limit: Duration, what: &str) -> Result<(), String> {
    ensure(
        elapsed < limit,
        format!("{what} took {:.1}s, limit {:.0}s", elapsed.as_secs_f64(), limit.as_secs_f64()),
    )
}

fn probe(console: &Console, slot: u8) -> Vec<u8> {
    console.aes().ecb(slot, Direction::Encrypt, &[0; 16]).unwrap()
}

fn criterion_1() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    for i in 0..1000 {
        let key: [u8; 16] = rng.gen();
        let plain: [[u8; 16]; 32] = std::array::from_fn(|_| rng.gen());
        let n_moves = rng.gen_range(0..=32);
        let mut dsts: Vec<u8> = (0..32).collect();
        for j in 0..n_moves {
            let k = rng.gen_range(j..32);
            dsts.swap(j, k);
        }
        let plan = ShufflePlan::new(dsts[..n_moves].iter().map(|&d| (rng.gen_range(0..32), d)))
            .map_err(|e| e.to_string())?;

        let mut nand = NandImage::default();
        let ct = crypto::ecb_with_key(&key, true, &Keysector(plain).to_bytes());
        nand.set_keysector(&Keysector::from_sector(&ct));
        shuffle_keysector(&mut nand, &plan);
        let dec = crypto::ecb_with_key(&key, false, &nand.keysector().to_bytes());
        ensure(
            Keysector::from_sector(&dec).0 == plan.apply(&plain),
            format!("triple {i} does not commute"),
        )?;
    }
    within(start.elapsed(), Duration::from_secs(5), "1000 triples")?;
    Ok(format!("1000/1000 triples commute in {:.2}s", start.elapsed().as_secs_f64()))
}

fn criterion_2(vendor: &Vendor) -> Check {
    let start = Instant::now();
    let build = vendor.release("10.0.0").map_err(|e| e.to_string())?;
    let mut ok = 0;
    for seed in 0..100 {
        let mut c = vendor.manufacture(1000 + seed).map_err(|e| e.to_string())?;
        let expected = crypto::sha256(c.otp_read().unwrap());
        match capture_otp_hash(&mut c, &build, &Stage1Options::default()) {
            Ok(cap) if cap.otp_hash == expected => ok += 1,
            Ok(_) => return Err(format!("console {seed}: wrong hash")),
            Err(e) => return Err(format!("console {seed}: {e}")),
        }
    }
    within(start.elapsed(), Duration::from_secs(60), "100 stage-1 runs")?;
    Ok(format!("{ok}/100 hashes match in {:.2}s", start.elapsed().as_secs_f64()))
}

fn criterion_3(vendor: &Vendor) -> Check {
    let (mut substituted_panics, mut corrupted_panics) = (0, 0);
    for seed in 0..100 {
        let mut c = vendor.manufacture(2000 + seed).map_err(|e| e.to_string())?;
        let k1 = c.nand().keysector_block(1).unwrap();
        c.nand_mut().set_keysector_block(2, &k1).unwrap();
        if c.boot(RebootMode::Warm).outcome.is_panic() {
            substituted_panics += 1;
        }

        let mut c = vendor.manufacture(2000 + seed).map_err(|e| e.to_string())?;
        let mut bad = c.nand().keysector_block(1).unwrap();
        bad[seed as usize % 16] ^= 1 << (seed % 8);
        c.nand_mut().set_keysector_block(1, &bad).unwrap();
        if c.boot(RebootMode::Warm).outcome
            == (BootOutcome::Panic {
                reason: PanicReason::KeyVerifyFailed,
            })
        {
            corrupted_panics += 1;
        }
    }
    ensure(
        substituted_panics == 0 && corrupted_panics == 100,
        format!("substituted Key #2: {substituted_panics} panics; corrupted Key #1: {corrupted_panics}/100"),
    )?;
    Ok("Key #2 substitution: 0/100 panics; Key #1 corruption: 100/100 panics".into())
}

fn criterion_4(vendor: &Vendor) -> Check {
    let zero_key_probe = crypto::encrypt_block(&crypto::cipher(&[0; 16]), &[0; 16]).to_vec();
    let mut c = vendor.manufacture(3000).map_err(|e| e.to_string())?;
    let img = vendor.release("8.1.0").map_err(|e| e.to_string())?;
    c.install_firm(FirmSlot::Firm0, &img.to_bytes()).map_err(|e| e.to_string())?;
    c.boot(RebootMode::Warm);
    let at_boot: Vec<_> = (0x18..=0x1f).map(|s| probe(&c, s)).collect();
    for s in 0x18..=0x1f {
        c.aes_mut().clear_keyslot(s).unwrap();
    }
    c.aes_mut().derive_subkeys(0x11, 0x18..=0x1f).map_err(|e| e.to_string())?;
    let regenerated: Vec<_> = (0x18..=0x1f).map(|s| probe(&c, s)).collect();
    ensure(regenerated == at_boot, "regenerated sub-keys differ")?;
    ensure(probe(&c, 0x11) != zero_key_probe, "8.1.0 cleared keyslot 0x11")?;

    let mut c = vendor.manufacture(3001).map_err(|e| e.to_string())?;
    let img = vendor.release("9.5.0").map_err(|e| e.to_string())?;
    c.install_firm(FirmSlot::Firm0, &img.to_bytes()).map_err(|e| e.to_string())?;
    c.boot(RebootMode::Warm);
    ensure(probe(&c, 0x11) == zero_key_probe, "9.5.0 left keyslot 0x11 loaded")?;
    Ok("8 sub-key probes regenerate identically; 9.5.0 keyslot 0x11 probes as zero key".into())
}

fn criterion_5(vendor: &Vendor) -> Check {
    let mut c = vendor.manufacture(4000).map_err(|e| e.to_string())?;
    c.set_config(ConsoleConfig {
        clobber_len: 0,
        ..c.config()
    });
    let big = vendor.release("8.1.0").map_err(|e| e.to_string())?.to_bytes();
    let small = vendor.release("10.2.0").map_err(|e| e.to_string())?.to_bytes();
    let mut broken = big.clone();
    broken[HEADER_LEN + 1] ^= 0x40;
    c.install_firm(FirmSlot::Firm0, &broken).map_err(|e| e.to_string())?;
    c.install_firm(FirmSlot::Firm1, &small).map_err(|e| e.to_string())?;
    let report = c.boot(RebootMode::Cold);
    ensure(report.booted_slot == Some(FirmSlot::Firm1), "FIRM1 did not boot")?;
    let (lo, hi) = (small.len(), big.len());
    let ram = c
        .memory()
        .read(FIRM_LOAD_BASE + lo as u32, hi - lo)
        .map_err(|e| e.to_string())?;
    ensure(ram == &broken[lo..hi], "residue differs from FIRM0 tail")?;
    ensure(hi - lo == 0x2_0000, format!("residue is {:#x} bytes", hi - lo))?;
    Ok(format!("{:#x} residue bytes match FIRM0 tail", hi - lo))
}

fn criterion_6(vendor: &Vendor) -> Check {
    let mut rng = ChaCha20Rng::seed_from_u64(6);
    let n = 1_000_000u32;
    let branches = (0..n).filter(|_| is_branch(rng.next_u32())).count() as f64;
    let p = 1.0 / 256.0;
    let sigma = (n as f64 * p * (1.0 - p)).sqrt();
    let z = (branches - n as f64 * p) / sigma;
    ensure(z.abs() <= 5.0, format!("branch frequency off by {z:.2} sigma"))?;

    let image = vendor.release("10.2.0").map_err(|e| e.to_string())?;
    let window = 0x0810_0000..0x0810_0000 + 4 * (1 << 16);
    let expected = expected_trials(1 << 16);
    let mut trials = Vec::new();
    for seed in [11u64, 22, 33] {
        let start = Instant::now();
        let r = bruteforce_branch_key(&image, window.clone(), &BruteforceConfig::new(seed))
            .map_err(|e| format!("seed {seed}: {e}"))?;
        within(start.elapsed(), Duration::from_secs(60), &format!("seed {seed}"))?;
        ensure(
            r.trials as f64 <= 20.0 * expected,
            format!("seed {seed}: {} trials", r.trials),
        )?;
        let plain = image.decrypt_section(&r.key);
        let off = image.header.entry_offset() as usize;
        let word = u32::from_le_bytes(plain[off..off + 4].try_into().unwrap());
        ensure(
            decode_instruction(word, image.header.entrypoint) == Instruction::Branch { target: r.target }
                && window.contains(&r.target),
            format!("seed {seed}: key does not re-verify"),
        )?;
        trials.push(r.trials);
    }
    Ok(format!(
        "branch rate z={z:.2}; trials {trials:?} vs expected {expected:.0}"
    ))
}

fn cli(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_bootshuffle"))
        .args(args)
        .env_remove("BOOTSHUFFLE_SEED")
        .output()
        .expect("CLI runs");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn cli_ok(args: &[&str]) -> Result<String, String> {
    let (code, stdout, stderr) = cli(args);
    ensure(code == 0, format!("`{}` exited {code}: {stderr}", args.join(" ")))?;
    Ok(stdout)
}

fn outcome_line(stdout: &str) -> String {
    stdout
        .lines()
        .find_map(|l| l.strip_prefix("OUTCOME "))
        .unwrap_or("<none>")
        .to_string()
}

fn read_json(path: &Path) -> Result<Value, String> {
    let text = std::fs::read_to_string(path).map_err(|e| e.to_string())?;
    serde_json::from_str(&text).map_err(|e| e.to_string())
}

fn criterion_7(dir: &Path) -> Check {
    let nand = dir.join("persist.bin");
    let payload = dir.join("payload.bin");
    let report = dir.join("persist.json");
    std::fs::write(&payload, b"\x00\x00\xa0\xe3persist").map_err(|e| e.to_string())?;
    let s = |p: &Path| p.to_str().unwrap().to_string();
    cli_ok(&["gen-console", "--out", &s(&nand), "--seed", "7000"])?;
    cli_ok(&[
        "attack", "persist", "--nand", &s(&nand), "--gap", "0x190", "--payload", &s(&payload),
        "--report", &s(&report),
    ])?;
    for i in 0..10 {
        let out = outcome_line(&cli_ok(&["boot", "--nand", &s(&nand)])?);
        ensure(
            out.starts_with("PayloadExecuted persist-payload"),
            format!("warm boot {i}: {out}"),
        )?;
    }
    let out = outcome_line(&cli_ok(&["boot", "--nand", &s(&nand), "--cold"])?);
    ensure(
        out.starts_with("PayloadExecuted persist-payload"),
        format!("cold boot after persistence: {out}"),
    )?;

    // stage 1 on its own relies on RAM surviving the reset
    let other = dir.join("stage1.bin");
    let s1 = dir.join("stage1.json");
    cli_ok(&["gen-console", "--out", &s(&other), "--seed", "7001"])?;
    let (code, _, _) = cli(&["attack", "stage1", "--nand", &s(&other), "--report", &s(&s1), "--cold"]);
    ensure(code == 1, format!("cold stage 1 exited {code}"))?;
    let kind = read_json(&s1)?["outcome"]["kind"].as_str().unwrap_or("").to_string();
    ensure(kind == "crash" || kind == "hang", format!("cold stage 1 ended in {kind}"))?;
    Ok(format!(
        "10/10 warm + 1/1 cold boots run the persistent payload; cold stage 1 ends in {kind}"
    ))
}

fn criterion_8(vendor: &Vendor) -> Check {
    let v1: Vec<String> = (1..=11).map(|i| i.to_string()).collect();
    let v2: Vec<String> = (1..=14).map(|i| i.to_string()).collect();
    let to_vec = |s: Vec<&str>| s.into_iter().map(String::from).collect::<Vec<_>>();

    let mut c = vendor.manufacture(8000).map_err(|e| e.to_string())?;
    let img = vendor.release("8.1.0").map_err(|e| e.to_string())?;
    c.install_firm(FirmSlot::Firm0, &img.to_bytes()).map_err(|e| e.to_string())?;
    let r = c.boot(RebootMode::Warm);
    ensure(to_vec(r.steps(Stage::Loader)) == v1, format!("v1: {:?}", r.steps(Stage::Loader)))?;
    ensure(
        r.steps(Stage::BootRom) == ["1", "2", "3", "4", "5", "5a"],
        format!("boot ROM, FIRM0 valid: {:?}", r.steps(Stage::BootRom)),
    )?;

    let mut c = vendor.manufacture(8001).map_err(|e| e.to_string())?;
    let mut firm0 = c.read_firm(FirmSlot::Firm0).map_err(|e| e.to_string())?;
    firm0[HEADER_LEN] ^= 1;
    c.install_firm(FirmSlot::Firm0, &firm0).map_err(|e| e.to_string())?;
    let r = c.boot(RebootMode::Warm);
    ensure(to_vec(r.steps(Stage::Loader)) == v2, format!("v2: {:?}", r.steps(Stage::Loader)))?;
    ensure(
        r.steps(Stage::BootRom) == ["1", "2", "3", "4", "5", "5b", "6", "7", "8", "8a"],
        format!("boot ROM, FIRM1 fallback: {:?}", r.steps(Stage::BootRom)),
    )?;

    let mut firm1 = c.read_firm(FirmSlot::Firm1).map_err(|e| e.to_string())?;
    firm1[HEADER_LEN] ^= 1;
    c.install_firm(FirmSlot::Firm1, &firm1).map_err(|e| e.to_string())?;
    let r = c.boot(RebootMode::Warm);
    ensure(
        r.steps(Stage::BootRom) == ["1", "2", "3", "4", "5", "5b", "6", "7", "8", "8b"],
        format!("boot ROM, both invalid: {:?}", r.steps(Stage::BootRom)),
    )?;
    Ok("v1 11 steps, v2 14 steps, boot ROM 5a / 5b-8a / 5b-8b paths".into())
}

fn criterion_9(dir: &Path) -> Check {
    let base = dir.join("det.bin");
    let payload = dir.join("det-payload.bin");
    std::fs::write(&payload, b"determinism").map_err(|e| e.to_string())?;
    let s = |p: &Path| p.to_str().unwrap().to_string();
    cli_ok(&["gen-console", "--out", &s(&base), "--seed", "9000"])?;
    let mut results = Vec::new();
    for workers in ["1", "8"] {
        let nand = dir.join(format!("det-{workers}.bin"));
        let report = dir.join(format!("det-{workers}.json"));
        std::fs::copy(&base, &nand).map_err(|e| e.to_string())?;
        cli_ok(&[
            "attack", "persist", "--nand", &s(&nand), "--payload", &s(&payload), "--report",
            &s(&report), "--workers", workers, "--seed", "99", "--reveal-secrets",
        ])?;
        let r = read_json(&report)?;
        results.push((r["key"].clone(), r["trials"].clone()));
    }
    ensure(results[0] == results[1], format!("1 worker {:?} vs 8 workers {:?}", results[0], results[1]))?;
    ensure(results[0].0.is_string(), "report carries no key")?;
    Ok(format!("key and trials identical ({} trials)", results[0].1))
}

#[test]
fn acceptance() {
    let vendor = Vendor::generate(DEFAULT_VENDOR_SEED).expect("vendor");
    let dir = tempfile::tempdir().expect("tempdir");
    let results: Vec<(usize, &str, Check)> = vec![
        (1, "ECB shuffle soundness", criterion_1()),
        (2, "stage-1 exploit end to end", criterion_2(&vendor)),
        (3, "second loader flaw isolation", criterion_3(&vendor)),
        (4, "first loader flaw isolation", criterion_4(&vendor)),
        (5, "boot ROM residue", criterion_5(&vendor)),
        (6, "branch probability model", criterion_6(&vendor)),
        (7, "persistence across reboots", criterion_7(dir.path())),
        (8, "step-order fidelity", criterion_8(&vendor)),
        (9, "brute-force determinism", criterion_9(dir.path())),
    ];
    let mut failed = 0;
    for (n, name, r) in &results {
        match r {
            Ok(detail) => println!("criterion {n} PASS {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("criterion {n} FAIL {name}: {why}");
            }
        }
    }
    assert_eq!(failed, 0, "{failed} acceptance criteria failed");
}

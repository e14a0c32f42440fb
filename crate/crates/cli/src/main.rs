use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use bootshuffle::attacks::{
    self, capture_otp_hash, install_persistence, scan_black_box, scan_harness, AttackError,
    BruteforceConfig, ScanReport, Stage1Options, DEFAULT_GAP,
};
use bootshuffle::bootchain::BootOutcome;
use bootshuffle::console::{Console, RebootMode};
use bootshuffle::crypto;
use bootshuffle::firm::{FirmImage, LoaderVariant};
use bootshuffle::nand::FirmSlot;
use bootshuffle::vendor::{
    ReleaseSpec, Vendor, DEFAULT_VENDOR_SEED, LARGEST_VERSION, SMALLEST_VERSION, VULNERABLE_VERSION,
};

#[derive(Parser)]
#[command(name = "bootshuffle", version, about = "Secure-boot simulator and keysector shuffling toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Manufacture a console with random OTP and the factory firmware.
    GenConsole {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, env = "BOOTSHUFFLE_SEED", value_parser = parse_u64)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_VENDOR_SEED, value_parser = parse_u64)]
        vendor_seed: u64,
        /// Print the OTP and its hash (the provisioning record).
        #[arg(long)]
        reveal_secrets: bool,
    },
    /// Build and sign a FIRM image with the fixture vendor key.
    BuildFirm {
        #[arg(long = "version")]
        version_label: String,
        #[arg(long)]
        loader: LoaderVariant,
        /// Section size in bytes, decimal or 0x-prefixed.
        #[arg(long, value_parser = parse_u32)]
        size: u32,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_VENDOR_SEED, value_parser = parse_u64)]
        vendor_seed: u64,
    },
    /// Write a FIRM image into one of the console's partitions.
    InstallFirm {
        #[arg(long)]
        nand: PathBuf,
        #[arg(long)]
        slot: FirmSlot,
        #[arg(long)]
        firm: PathBuf,
    },
    /// Reset the console and run the boot chain.
    Boot {
        #[arg(long)]
        nand: PathBuf,
        /// Power cycle instead of a warm reset.
        #[arg(long)]
        cold: bool,
        /// Print one line per completed boot step.
        #[arg(long)]
        trace: bool,
    },
    #[command(subcommand)]
    Attack(AttackCommand),
    /// Look for keysector keys that turn a build's entry word into a branch.
    Scan {
        #[arg(long)]
        nand: PathBuf,
        /// Directory of FIRM images to try.
        #[arg(long)]
        builds: PathBuf,
        /// Compute entry words from the fixture vendor's keys instead of booting.
        #[arg(long)]
        harness: bool,
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum AttackCommand {
    /// Recover the OTP hash through the unverified Key #2.
    Stage1 {
        #[command(flatten)]
        common: AttackArgs,
        /// Vulnerable FIRM image; defaults to the crafted catalog release.
        #[arg(long)]
        build: Option<PathBuf>,
        /// Power cycle before the exploited boot (the sled will not survive).
        #[arg(long)]
        cold: bool,
        /// Skip planting the NOP sled.
        #[arg(long)]
        no_sled: bool,
    },
    /// Install a payload that runs on every boot.
    Persist {
        #[command(flatten)]
        common: AttackArgs,
        /// Bytes left between the end of FIRM1 and the branch window.
        #[arg(long, default_value_t = DEFAULT_GAP, value_parser = parse_u32)]
        gap: u32,
        #[arg(long)]
        payload: PathBuf,
        /// Skip stage 1 and use this OTP hash (64 hex digits).
        #[arg(long)]
        otp_hash: Option<String>,
        /// Largest signed FIRM; defaults to the catalog's.
        #[arg(long)]
        big: Option<PathBuf>,
        /// Smallest signed FIRM; defaults to the catalog's.
        #[arg(long)]
        small: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Brute-force candidate stream seed.
        #[arg(long, env = "BOOTSHUFFLE_SEED", default_value_t = 0, value_parser = parse_u64)]
        seed: u64,
    },
}

#[derive(Args)]
struct AttackArgs {
    #[arg(long)]
    nand: PathBuf,
    #[arg(long)]
    report: PathBuf,
    /// Put the OTP hash and plaintext keys in the report.
    #[arg(long)]
    reveal_secrets: bool,
}

fn parse_u64(s: &str) -> Result<u64, String> {
    match s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        Some(hex) => u64::from_str_radix(hex, 16),
        None => s.parse(),
    }
    .map_err(|e| format!("`{s}`: {e}"))
}

fn parse_u32(s: &str) -> Result<u32, String> {
    parse_u64(s).and_then(|v| u32::try_from(v).map_err(|_| format!("`{s}` does not fit in 32 bits")))
}

/// Hashes shown in place of secrets.
fn fingerprint(secret: &[u8]) -> String {
    hex::encode(crypto::sha256(secret))
}

fn outcome_json(outcome: &BootOutcome, reveal: bool) -> Value {
    match outcome {
        BootOutcome::PayloadExecuted { hook_id, captured } => {
            let mut v = json!({
                "kind": "payload_executed",
                "hook_id": hook_id,
                "captured_sha256": fingerprint(captured),
            });
            if reveal {
                v["captured"] = json!(hex::encode(captured));
            }
            v
        }
        other => serde_json::to_value(other).expect("outcome serializes"),
    }
}

fn write_report(path: &Path, report: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(report)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing report {}", path.display()))
}

fn load_console(path: &Path) -> Result<Console> {
    Console::load(path).with_context(|| format!("loading console {}", path.display()))
}

fn load_firm(path: &Path) -> Result<FirmImage> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    FirmImage::parse(&bytes).with_context(|| format!("parsing {}", path.display()))
}

fn vendor_for(console: &Console) -> Result<Vendor> {
    Ok(Vendor::generate(console.vendor_seed())?)
}

fn release_or_file(path: Option<&Path>, console: &Console, version: &str) -> Result<FirmImage> {
    match path {
        Some(p) => load_firm(p),
        None => Ok(vendor_for(console)?.release(version)?),
    }
}

/// Attack failures are an expected result, not a crash: they get a report
/// and exit code 1.
enum Finish {
    Ok,
    AttackFailed,
}

fn run(cli: Cli) -> Result<Finish> {
    match cli.command {
        Command::GenConsole {
            out,
            seed,
            vendor_seed,
            reveal_secrets,
        } => {
            let vendor = Vendor::generate(vendor_seed)?;
            let console = vendor.manufacture(seed)?;
            console.save(&out)?;
            let otp = console.otp_read()?;
            let mut summary = json!({
                "console": out.display().to_string(),
                "seed": seed,
                "vendor_seed": vendor_seed,
                "otp_hash_sha256": fingerprint(&crypto::sha256(otp)),
            });
            if reveal_secrets {
                summary["otp"] = json!(hex::encode(otp));
                summary["otp_hash"] = json!(hex::encode(crypto::sha256(otp)));
            }
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::BuildFirm {
            version_label,
            loader,
            size,
            out,
            vendor_seed,
        } => {
            let vendor = Vendor::generate(vendor_seed)?;
            let img = vendor.build(&ReleaseSpec::custom(&version_label, loader, size))?;
            fs::write(&out, img.to_bytes())?;
            println!(
                "built {} ({:?}, section {:#x}, {:#x} bytes) -> {}",
                version_label,
                loader,
                size,
                img.container_len(),
                out.display()
            );
        }
        Command::InstallFirm { nand, slot, firm } => {
            let mut console = load_console(&nand)?;
            let bytes = fs::read(&firm)?;
            console.install_firm(slot, &bytes)?;
            console.save(&nand)?;
            println!("installed {} ({:#x} bytes) into {slot}", firm.display(), bytes.len());
        }
        Command::Boot { nand, cold, trace } => {
            let mut console = load_console(&nand)?;
            let mode = if cold { RebootMode::Cold } else { RebootMode::Warm };
            let report = console.boot(mode);
            if trace {
                for line in report.trace_lines() {
                    println!("{line}");
                }
            }
            console.save(&nand)?;
            println!("OUTCOME {}", report.outcome);
        }
        Command::Attack(AttackCommand::Stage1 {
            common,
            build,
            cold,
            no_sled,
        }) => {
            let mut console = load_console(&common.nand)?;
            let build = release_or_file(build.as_deref(), &console, VULNERABLE_VERSION)?;
            let opts = Stage1Options {
                sled_len: if no_sled { 0 } else { Stage1Options::default().sled_len },
                reboot: if cold { RebootMode::Cold } else { RebootMode::Warm },
                ..Default::default()
            };
            let mut report = json!({
                "attack": "stage1",
                "build": build.header.version_label,
                "sled_addr": format!("{:#010x}", opts.sled_addr),
                "sled_len": format!("{:#x}", opts.sled_len),
                "reboot": opts.reboot,
            });
            let result = capture_otp_hash(&mut console, &build, &opts);
            console.save(&common.nand)?;
            match result {
                Ok(cap) => {
                    report["success"] = json!(true);
                    report["outcome"] = outcome_json(&cap.boot.outcome, common.reveal_secrets);
                    report["otp_hash_sha256"] = json!(fingerprint(&cap.otp_hash));
                    if common.reveal_secrets {
                        report["otp_hash"] = json!(hex::encode(cap.otp_hash));
                    }
                    write_report(&common.report, &report)?;
                    println!("stage1: OTP hash captured");
                }
                Err(AttackError::AttackFailed(outcome)) => {
                    report["success"] = json!(false);
                    report["outcome"] = outcome_json(&outcome, common.reveal_secrets);
                    write_report(&common.report, &report)?;
                    eprintln!("stage1 failed: boot ended in {outcome}");
                    return Ok(Finish::AttackFailed);
                }
                Err(e) => return Err(e.into()),
            }
        }
        Command::Attack(AttackCommand::Persist {
            common,
            gap,
            payload,
            otp_hash,
            big,
            small,
            workers,
            seed,
        }) => {
            let mut console = load_console(&common.nand)?;
            let payload = fs::read(&payload).with_context(|| format!("reading {}", payload.display()))?;
            let big = release_or_file(big.as_deref(), &console, LARGEST_VERSION)?;
            let small = release_or_file(small.as_deref(), &console, SMALLEST_VERSION)?;
            let (hash, source) = match otp_hash {
                Some(h) => {
                    let bytes = hex::decode(h.trim()).context("--otp-hash is not hex")?;
                    let hash: [u8; 32] = bytes
                        .try_into()
                        .map_err(|_| anyhow::anyhow!("--otp-hash must be 32 bytes"))?;
                    (hash, "argument")
                }
                None => {
                    let build = vendor_for(&console)?.release(VULNERABLE_VERSION)?;
                    match capture_otp_hash(&mut console, &build, &Stage1Options::default()) {
                        Ok(cap) => (cap.otp_hash, "stage1"),
                        Err(AttackError::AttackFailed(outcome)) => {
                            write_report(
                                &common.report,
                                &json!({
                                    "attack": "persist",
                                    "success": false,
                                    "stage1_outcome": outcome_json(&outcome, common.reveal_secrets),
                                }),
                            )?;
                            eprintln!("persist: stage 1 failed, boot ended in {outcome}");
                            return Ok(Finish::AttackFailed);
                        }
                        Err(e) => return Err(e.into()),
                    }
                }
            };
            let cfg = BruteforceConfig::new(seed).workers(workers);
            let plan = install_persistence(&mut console, &hash, &big, &small, &payload, gap, &cfg)
                .map_err(anyhow::Error::from)?;
            console.save(&common.nand)?;
            let mut report = json!({
                "attack": "persist",
                "success": true,
                "otp_hash_source": source,
                "big": plan.big_version,
                "small": plan.small_version,
                "gap": format!("{gap:#x}"),
                "window": [format!("{:#010x}", plan.window.start), format!("{:#010x}", plan.window.end)],
                "expected_trials": attacks::expected_trials(plan.window.len() as u64 / 4),
                "sled_start": format!("{:#010x}", plan.sled_start),
                "payload_addr": format!("{:#010x}", plan.payload_addr),
                "payload_len": payload.len(),
                "seed": seed,
                "trials": plan.trials,
                "key_sha256": fingerprint(&plan.key),
            });
            if common.reveal_secrets {
                report["key"] = json!(hex::encode(plan.key));
                report["otp_hash"] = json!(hex::encode(hash));
            }
            write_report(&common.report, &report)?;
            println!(
                "persist: payload at {:#010x} after {} trials",
                plan.payload_addr, plan.trials
            );
        }
        Command::Scan {
            nand,
            builds,
            harness,
            report,
        } => {
            let mut console = load_console(&nand)?;
            let mut paths: Vec<PathBuf> = fs::read_dir(&builds)
                .with_context(|| format!("listing {}", builds.display()))?
                .map(|e| e.map(|e| e.path()))
                .collect::<std::io::Result<_>>()?;
            paths.retain(|p| p.is_file());
            paths.sort();
            let images = paths.iter().map(|p| load_firm(p)).collect::<Result<Vec<_>>>()?;
            if images.is_empty() {
                bail!("no FIRM images in {}", builds.display());
            }
            let result: ScanReport = if harness {
                scan_harness(&images, vendor_for(&console)?.keysector_plaintext())
            } else {
                let r = scan_black_box(&mut console, &images)?;
                console.save(&nand)?;
                r
            };
            let out = json!({
                "mode": if harness { "harness" } else { "black_box" },
                "builds": images.iter().map(|i| i.header.version_label.clone()).collect::<Vec<_>>(),
                "examined": result.examined,
                "hits": result.hits.iter().map(|h| json!({
                    "version": h.version_label,
                    "key_number": h.key_number,
                    "entry_word": format!("{:#010x}", h.entry_word),
                    "decoded": h.decoded,
                    "target_usability": h.target_usability,
                })).collect::<Vec<_>>(),
            });
            match report {
                Some(path) => write_report(&path, &out)?,
                None => println!("{}", serde_json::to_string_pretty(&out)?),
            }
        }
    }
    Ok(Finish::Ok)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(Finish::Ok) => ExitCode::SUCCESS,
        Ok(Finish::AttackFailed) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

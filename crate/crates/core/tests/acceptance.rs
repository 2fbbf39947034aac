//! Exit criteria. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any fails.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::net::{Shutdown, TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::time::{Duration, Instant};

use adatok::baselines::{grid_pool_shape, retention_error, DroppedTarget, Strategy};
use adatok::cli;
use adatok::cost_model::{
    compute_cost, image_bytes, reduction_factor, token_bytes, verify_benefit_identity, DecoderConfig,
};
use adatok::fixtures::{self, fixture_set, Fixture};
use adatok::mask_pipeline::{run_pipeline, Bitmap, GridPromptConfig, MaskSet, ObjectMask};
use adatok::object_merge::{merge, merge_fast, CompressedTokenSet, MergeOptions, Origin, TokenMeta, UpsampleMode};
use adatok::tensor_io::DType;
use adatok::token_wire::{self, pack, unpack, SendOptions, Server, NAK};
use rand::Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn run_cli(args: &[&str]) -> (i32, Vec<u8>, Vec<u8>) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv: Vec<&str> = std::iter::once("adatok").chain(args.iter().copied()).collect();
    let code = cli::run(argv, &mut out, &mut err);
    (code, out, err)
}

// ---------------------------------------------------------------------------

const TABLE5_CELLS: [(&str, &str, &str); 14] = [
    ("224²", "147", "KB/s"),
    ("336²", "330.75", "KB/s"),
    ("480²", "675", "KB/s"),
    ("512²", "768", "KB/s"),
    ("640²", "1.17", "MB/s"),
    ("768²", "1.69", "MB/s"),
    ("1024²", "3.00", "MB/s"),
    ("tokens 8", "16", "KB/s"),
    ("tokens 12", "24", "KB/s"),
    ("tokens 16", "32", "KB/s"),
    ("tokens 32", "64", "KB/s"),
    ("tokens 64", "128", "KB/s"),
    ("tokens 128", "256", "KB/s"),
    ("tokens 192", "384", "KB/s"),
];

fn table5_reproduction() -> Outcome {
    let start = Instant::now();
    let (code, text, _) = run_cli(&["table5"]);
    let (code_csv, csv, _) = run_cli(&["table5", "--csv"]);
    let elapsed = start.elapsed();
    ensure(code == 0 && code_csv == 0, "table5 exited non-zero")?;

    let golden = include_str!("golden/table5.txt");
    ensure(
        String::from_utf8_lossy(&text) == golden,
        "text output differs from golden file",
    )?;
    let golden_csv = include_str!("golden/table5.csv");
    let csv = String::from_utf8(csv).map_err(|e| e.to_string())?;
    ensure(csv == golden_csv, "csv output differs from golden file")?;

    let rows: Vec<Vec<&str>> = csv.lines().skip(1).map(|l| l.split(',').collect()).collect();
    ensure(rows.len() == 14, format!("{} rows", rows.len()))?;
    for (row, (label, value, unit)) in rows.iter().zip(TABLE5_CELLS) {
        ensure(
            row[0] == label && row[2] == value && row[3] == unit,
            format!("row {row:?} != ({label}, {value}, {unit})"),
        )?;
    }
    ensure(elapsed < Duration::from_secs(1), format!("took {elapsed:?}"))?;
    Ok(format!("14/14 cells exact, {elapsed:.2?}"))
}

fn worked_example() -> Outcome {
    let img = image_bytes(640, 480);
    let tok = token_bytes(59, 1024, DType::F16);
    let factor = reduction_factor(640, 480, 59, 1024, DType::F16);
    ensure(img == 921_600, format!("image bytes {img}"))?;
    ensure(tok == 120_832, format!("token bytes {tok}"))?;
    ensure((7.4..=7.7).contains(&factor), format!("factor {factor}"))?;
    Ok(format!("921600 B / 120832 B = {factor:.4}"))
}

fn merge_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = common::rng(0xACCE_0001);
    let (mut worst_nearest, mut worst_bilinear) = (0.0f64, 0.0f64);
    for i in 0..1000 {
        let inst = common::random_instance(&mut rng);
        let nearest = merge(&inst.grid, &inst.masks, &MergeOptions::default()).map_err(|e| e.to_string())?;
        let oracle = common::brute_force_nearest(&inst.grid, &inst.masks);
        let err = common::relative_max_error(&nearest.tokens, &oracle);
        worst_nearest = worst_nearest.max(err);
        ensure(err <= 1e-6, format!("instance {i} nearest: rel err {err:e}"))?;

        let opts = MergeOptions {
            mode: UpsampleMode::Bilinear,
            ..Default::default()
        };
        let bilinear = merge(&inst.grid, &inst.masks, &opts).map_err(|e| e.to_string())?;
        let oracle = common::brute_force_bilinear(&inst.grid, &inst.masks);
        let err = common::relative_max_error(&bilinear.tokens, &oracle);
        worst_bilinear = worst_bilinear.max(err);
        ensure(err <= 1e-6, format!("instance {i} bilinear: rel err {err:e}"))?;
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(30), format!("took {elapsed:?}"))?;
    Ok(format!(
        "1000 instances, max rel err nearest {worst_nearest:.2e} bilinear {worst_bilinear:.2e}, {elapsed:.2?}"
    ))
}

fn fast_path_equivalence() -> Outcome {
    let mut rng = common::rng(0xACCE_0001);
    let mut worst = 0.0f64;
    for i in 0..1000 {
        let inst = common::random_instance(&mut rng);
        for residual_token in [false, true] {
            let opts = MergeOptions {
                residual_token,
                ..Default::default()
            };
            let slow = merge(&inst.grid, &inst.masks, &opts).map_err(|e| e.to_string())?;
            let fast = merge_fast(&inst.grid, &inst.masks, &opts).map_err(|e| e.to_string())?;
            ensure(slow.meta == fast.meta, format!("instance {i}: metadata differs"))?;
            let err = common::relative_max_diff(&fast.tokens, &slow.tokens);
            worst = worst.max(err);
            ensure(err <= 1e-6, format!("instance {i}: rel diff {err:e}"))?;
        }
    }
    Ok(format!("1000 instances x residual on/off, max rel diff {worst:.2e}"))
}

fn benefit_identity() -> Outcome {
    let mut rng = common::rng(0xACCE_0002);
    for _ in 0..10_000 {
        let l = rng.gen_range(1..=128u32);
        let k = rng.gen_range(1..=l);
        let r = 1.0 - rng.gen_range(0.0..1.0f64); // (0, 1]
        let cfg = DecoderConfig::new(l, k, rng.gen_range(1..=4096)).map_err(|e| e.to_string())?;
        ensure(
            verify_benefit_identity(&cfg, r),
            format!("identity fails at L={l} k={k} r={r}"),
        )?;
    }
    // monotone in r (k < L) and in k (r < 1)
    let mut checks = 0;
    for _ in 0..2_000 {
        let l = rng.gen_range(2..=128u32);
        let k = rng.gen_range(1..l);
        let cfg = DecoderConfig::new(l, k, 576).unwrap();
        let (a, b) = (rng.gen_range(0.001..0.999f64), rng.gen_range(0.001..0.999f64));
        let (lo, hi) = (a.min(b), a.max(b));
        if lo < hi {
            let (b_lo, b_hi) = (
                compute_cost(&cfg, lo).unwrap().benefit,
                compute_cost(&cfg, hi).unwrap().benefit,
            );
            ensure(
                b_lo > b_hi,
                format!("not decreasing in r at L={l} k={k}: {lo}->{b_lo}, {hi}->{b_hi}"),
            )?;
            checks += 1;
        }
        let next = DecoderConfig::new(l, k + 1, 576).unwrap();
        let r = rng.gen_range(0.0..0.999f64).max(1e-3);
        ensure(
            compute_cost(&cfg, r).unwrap().benefit > compute_cost(&next, r).unwrap().benefit,
            format!("not decreasing in k at L={l} k={k} r={r}"),
        )?;
        checks += 1;
    }
    Ok(format!("10000 identity cases at 1e-9, {checks} monotonicity checks"))
}

/// Adds candidates the pipeline must reject: low-confidence copies, a
/// near-duplicate of the largest mask, and a speck no grid point hits.
fn with_distractors(fx: &Fixture) -> MaskSet {
    let (h, w) = (fx.candidates.image_height(), fx.candidates.image_width());
    let mut masks = fx.candidates.masks().to_vec();
    let mut next = masks.len() as u32 + 100;
    let mut push = |masks: &mut Vec<ObjectMask>, b: Bitmap, c: f32| {
        masks.push(ObjectMask::new(b, c, next));
        next += 1;
    };
    for m in fx.candidates.masks().to_vec() {
        push(&mut masks, m.bitmap.clone(), 0.5);
    }
    let mut near = fx.candidates.masks()[0].bitmap.clone();
    let first = near.bits().iter().position(|&b| b).unwrap();
    near.set(first / w, first % w, false);
    push(&mut masks, near, 0.95);
    // (0, 0) is never a grid point at p = 32 on 336×336
    push(&mut masks, Bitmap::rect(h, w, 0, 0, 1, 1), 0.99);
    MaskSet::new(h, w, masks).unwrap()
}

fn adaptivity() -> Outcome {
    // the merge path has no budget knob; adding a field breaks this build
    let MergeOptions {
        mode: _,
        residual_token: _,
        threads: _,
    } = MergeOptions::default();

    let cfg = GridPromptConfig::default();
    let mut summary = Vec::new();
    let mut ratios = Vec::new();
    for fx in fixture_set() {
        let candidates = with_distractors(&fx);
        let survived = run_pipeline(&candidates, &cfg).map_err(|e| e.to_string())?;
        let cts = merge_fast(&fx.features, &survived, &MergeOptions::default()).map_err(|e| e.to_string())?;
        ensure(
            survived.len() == fx.object_count() && cts.len() == survived.len(),
            format!(
                "{}: {} candidates -> {} survived -> {} tokens, expected {}",
                fx.name,
                candidates.len(),
                survived.len(),
                cts.len(),
                fx.object_count()
            ),
        )?;
        ratios.push(cts.compression_ratio());
        summary.push(format!("{}->{}", candidates.len(), cts.len()));
    }
    ensure(
        ratios.windows(2).all(|w| w[0] < w[1]),
        "ratio does not vary with object count",
    )?;
    Ok(format!("candidates->tokens {}", summary.join(", ")))
}

fn information_completeness() -> Outcome {
    let mut lines = Vec::new();
    for fx in fixture_set().into_iter().filter(|f| f.object_count() >= 3) {
        let k = fx.object_count();
        let ms = run_pipeline(&fx.candidates, &GridPromptConfig::default()).map_err(|e| e.to_string())?;
        let err_of = |s: Strategy, masks: Option<&MaskSet>| -> Result<(usize, f64), String> {
            let c = s.apply(&fx.features, masks).map_err(|e| e.to_string())?;
            let e = retention_error(&fx.features, &c.tokens, &c.assignment, DroppedTarget::Zero)
                .map_err(|e| e.to_string())?;
            Ok((c.tokens.len(), e))
        };
        let (obj_k, obj_e) = err_of(Strategy::ObjectMerge(MergeOptions::default()), Some(&ms))?;
        ensure(
            obj_k == k && obj_e == 0.0,
            format!("{}: object_merge k={obj_k} err={obj_e}", fx.name),
        )?;
        let (top_k, top_e) = err_of(Strategy::TopkDrop { budget: k }, None)?;
        ensure(top_k == k && top_e > 0.0, format!("{}: topk_drop err={top_e}", fx.name))?;
        let (oh, ow) = grid_pool_shape(24, 24, k).ok_or("no pool shape")?;
        let (pool_k, pool_e) = err_of(Strategy::GridPool { out_h: oh, out_w: ow }, None)?;
        ensure(
            pool_k <= k && pool_e > 0.0,
            format!("{}: grid_pool err={pool_e}", fx.name),
        )?;
        lines.push(format!(
            "{}: merge {obj_k}/0, topk {top_k}/{top_e:.3}, pool {pool_k}/{pool_e:.3}",
            fx.name
        ));
    }
    Ok(lines.join("; "))
}

fn wire_roundtrip() -> Outcome {
    let mut rng = common::rng(0xACCE_0003);
    // f32 exact, f16 within half an ULP (2^-11 relative) on normal-range values
    for _ in 0..200 {
        let k = rng.gen_range(0..20);
        let d = rng.gen_range(1..64);
        let tokens: Vec<f32> = (0..k * d)
            .map(|_| {
                let mag = 2f32.powf(rng.gen_range(-14.0..15.9));
                if rng.gen_bool(0.5) {
                    mag
                } else {
                    -mag
                }
            })
            .collect();
        let cts = CompressedTokenSet {
            dim: d,
            tokens,
            meta: (0..k)
                .map(|i| TokenMeta {
                    source: Some(i as u32),
                    area: 1 + i as u64,
                })
                .collect(),
            origin: Origin {
                image_height: 336,
                image_width: 336,
                grid_height: 24,
                grid_width: 24,
            },
            residual_included: false,
        };
        let exact = unpack(&pack(&cts, DType::F32).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        ensure(exact == cts, "f32 round trip not exact")?;
        let half = unpack(&pack(&cts, DType::F16).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        for (&a, &b) in half.tokens.iter().zip(&cts.tokens) {
            ensure(
                (f64::from(a) - f64::from(b)).abs() <= f64::from(b.abs()) * 2f64.powi(-11),
                format!("f16 error too large: {b} -> {a}"),
            )?;
        }
    }

    // loopback transfer of a 59 × 1024 f16 payload
    let sink = tempfile::tempdir().map_err(|e| e.to_string())?;
    let server = Server::bind("127.0.0.1:0", sink.path())
        .map_err(|e| e.to_string())?
        .spawn();
    let cts = CompressedTokenSet {
        dim: 1024,
        tokens: (0..59 * 1024).map(|_| rng.gen_range(-4.0f32..4.0)).collect(),
        meta: (0..59)
            .map(|i| TokenMeta {
                source: Some(i),
                area: 100,
            })
            .collect(),
        origin: Origin {
            image_height: 480,
            image_width: 640,
            grid_height: 24,
            grid_width: 24,
        },
        residual_included: false,
    };
    let frame = pack(&cts, DType::F16).map_err(|e| e.to_string())?;
    token_wire::send(server.addr, &frame, &SendOptions::default()).map_err(|e| e.to_string())?;
    let stored = stored_frames(sink.path());
    ensure(stored.len() == 1, format!("{} files stored", stored.len()))?;
    let (received, dtype) = token_wire::unpack_with_dtype(&fs::read(&stored[0]).unwrap()).map_err(|e| e.to_string())?;
    let sent_half = unpack(&frame).unwrap();
    ensure(
        dtype == DType::F16 && received.tokens.len() * 2 == 120_832,
        "payload is not 120832 bytes",
    )?;
    ensure(received == sent_half, "received tokens differ from sent tokens")?;

    // fuzz: malformed messages over real connections
    let fuzz = fuzz_server(&server.addr, 10_000, &mut rng)?;
    ensure(server.is_running(), "server stopped during fuzzing")?;
    token_wire::send(server.addr, &frame, &SendOptions::default())
        .map_err(|e| format!("server unusable after fuzzing: {e}"))?;
    let entries: Vec<PathBuf> = fs::read_dir(sink.path()).unwrap().map(|e| e.unwrap().path()).collect();
    ensure(entries == stored, format!("sink holds unexpected files: {entries:?}"))?;
    server.shutdown().map_err(|e| e.to_string())?;
    Ok(format!(
        "f32 exact, f16 <= 2^-11 rel, 120832-byte payload intact, {fuzz}"
    ))
}

fn stored_frames(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "tok"))
        .collect();
    v.sort();
    v
}

/// One malformed message per connection; every reply must be a single NAK.
fn fuzz_server(addr: &std::net::SocketAddr, n: usize, rng: &mut impl Rng) -> Outcome {
    let valid = pack(
        &CompressedTokenSet {
            dim: 4,
            tokens: vec![0.5; 12],
            meta: (0..3)
                .map(|i| TokenMeta {
                    source: Some(i),
                    area: 5,
                })
                .collect(),
            origin: Origin {
                image_height: 8,
                image_width: 8,
                grid_height: 2,
                grid_width: 2,
            },
            residual_included: false,
        },
        DType::F16,
    )
    .unwrap();
    let mut cases: Vec<Vec<u8>> = Vec::with_capacity(n);
    while cases.len() < n {
        let len = rng.gen_range(1..200);
        let random: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
        let msg = match cases.len() % 4 {
            // random bytes, random prefix
            0 => random,
            // honest prefix, random body
            1 => [&(random.len() as u32).to_le_bytes()[..], &random].concat(),
            // honest prefix, corrupted valid frame
            2 => {
                let mut body = valid.clone();
                let at = rng.gen_range(0..body.len());
                body[at] ^= 1 << rng.gen_range(0..8);
                if rng.gen_bool(0.3) {
                    body.truncate(rng.gen_range(0..body.len()));
                }
                if unpack(&body).is_ok() {
                    continue;
                }
                [&(body.len() as u32).to_le_bytes()[..], &body].concat()
            }
            // prefix promising more than is sent
            _ => [
                &((random.len() + rng.gen_range(1..1000)) as u32).to_le_bytes()[..],
                &random,
            ]
            .concat(),
        };
        cases.push(msg);
    }
    let addr = *addr;
    let chunks: Vec<Vec<Vec<u8>>> = cases.chunks(n.div_ceil(8)).map(|c| c.to_vec()).collect();
    let results: Vec<Result<usize, String>> = std::thread::scope(|s| {
        let handles: Vec<_> = chunks
            .into_iter()
            .map(|chunk| {
                s.spawn(move || {
                    for msg in &chunk {
                        let mut stream = TcpStream::connect(addr).map_err(|e| e.to_string())?;
                        stream.set_read_timeout(Some(Duration::from_secs(10))).unwrap();
                        let _ = stream.write_all(msg);
                        let _ = stream.shutdown(Shutdown::Write);
                        let mut reply = Vec::new();
                        let _ = stream.read_to_end(&mut reply);
                        if reply != [NAK] {
                            return Err(format!("reply {reply:?} to {msg:02x?}"));
                        }
                    }
                    Ok(chunk.len())
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let mut total = 0;
    for r in results {
        total += r?;
    }
    Ok(format!("{total} malformed messages answered with NAK"))
}

// ---------------------------------------------------------------------------

fn snapshot_dir(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut map = BTreeMap::new();
    for entry in walk(dir) {
        let rel = entry.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
        map.insert(rel, fs::read(&entry).unwrap());
    }
    map
}

fn walk(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}

fn free_port() -> u16 {
    TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

struct ServeProcess(Child);

impl Drop for ServeProcess {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn start_serve(sink: &Path) -> Result<(ServeProcess, u16), String> {
    for _ in 0..5 {
        let port = free_port();
        let child = Command::new(env!("CARGO_BIN_EXE_adatok"))
            .args(["serve", "--bind", "127.0.0.1", "--port", &port.to_string(), "--out"])
            .arg(sink)
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| e.to_string())?;
        let mut proc = ServeProcess(child);
        let deadline = Instant::now() + Duration::from_secs(5);
        while Instant::now() < deadline {
            if TcpStream::connect(("127.0.0.1", port)).is_ok() {
                return Ok((proc, port));
            }
            if proc.0.try_wait().map_err(|e| e.to_string())?.is_some() {
                break;
            }
            std::thread::sleep(Duration::from_millis(20));
        }
    }
    Err("could not start `adatok serve`".into())
}

/// Runs every command twice in fresh directories and compares stdout plus
/// every file written.
fn determinism() -> Outcome {
    let run_all = || -> Result<BTreeMap<String, Vec<u8>>, String> {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let d = dir.path();
        let p = |s: &str| d.join(s).to_string_lossy().into_owned();
        let mut results = BTreeMap::new();
        let mut record = |name: &str, args: &[&str], expect: i32| -> Result<(), String> {
            let (code, out, _) = run_cli(args);
            ensure(code == expect, format!("`{name}` exited {code}"))?;
            results.insert(format!("stdout:{name}"), out);
            Ok(())
        };
        let fx = p("fixtures");
        let demo = |f: &str| format!("{fx}/objects_05/{f}");
        record("fixtures", &["fixtures", "--out", &fx], 0)?;
        let merge_args = |out: &str, extra: &[&str]| -> Vec<String> {
            let mut v: Vec<String> = [
                "merge",
                "--features",
                &demo(fixtures::FEATURES_FILE),
                "--masks",
                &demo(fixtures::MASKS_FILE),
                "--scores",
                &demo(fixtures::SCORES_FILE),
                "--out",
                out,
            ]
            .iter()
            .map(|s| s.to_string())
            .collect();
            v.extend(extra.iter().map(|s| s.to_string()));
            v
        };
        let variants: [(&str, Vec<&str>); 4] = [
            ("merge", vec![]),
            ("merge-f32", vec!["--dtype", "f32"]),
            ("merge-bilinear", vec!["--upsample", "bilinear", "--residual"]),
            ("merge-empty", vec!["--sigma", "0.95"]),
        ];
        for (name, extra) in &variants {
            let out = p(&format!("{name}.tok"));
            let args = merge_args(&out, extra);
            let args: Vec<&str> = args.iter().map(String::as_str).collect();
            record(name, &args, if *name == "merge-empty" { 5 } else { 0 })?;
        }
        record("table5", &["table5"], 0)?;
        record("table5-csv", &["table5", "--csv"], 0)?;
        record(
            "cost",
            &[
                "cost",
                "--layers",
                "32",
                "--at",
                "1",
                "--tokens",
                "53",
                "--grid",
                "24x24",
                "--flops-per-pair",
                "8192",
            ],
            0,
        )?;
        record(
            "cost-csv",
            &["cost", "--layers", "32", "--at", "4", "--ratio", "0.25", "--csv"],
            0,
        )?;
        record("bandwidth", &["bandwidth"], 0)?;
        record(
            "bandwidth-csv",
            &["bandwidth", "--image", "1024x1024", "--tokens", "192", "--csv"],
            0,
        )?;
        record(
            "compare",
            &["compare", "--fixtures", &fx, "--budgets", "3,5,12,1000"],
            0,
        )?;

        let sink = d.join("sink");
        let (_server, port) = start_serve(&sink)?;
        let port = port.to_string();
        record(
            "send",
            &["send", "--host", "127.0.0.1", "--port", &port, &p("merge.tok")],
            0,
        )?;
        record(
            "send-again",
            &["send", "--host", "127.0.0.1", "--port", &port, &p("merge.tok")],
            0,
        )?;

        let mut files = snapshot_dir(d);
        // the manifests name their own paths, which differ between the two runs
        for (k, v) in files.iter_mut() {
            if k.ends_with(".manifest.json") {
                *v = String::from_utf8_lossy(v)
                    .replace(&d.to_string_lossy().into_owned(), "<tmp>")
                    .into_bytes();
            }
        }
        results.extend(files.into_iter().map(|(k, v)| (format!("file:{k}"), v)));
        let stdout = |k: &str| results.get(&format!("stdout:{k}")).cloned().unwrap_or_default();
        let compare = stdout("compare");
        ensure(!compare.is_empty(), "compare printed nothing")?;
        ensure(!stdout("send").is_empty(), "send printed nothing")?;
        Ok(results)
    };
    let first = run_all()?;
    let second = run_all()?;
    ensure(first.keys().eq(second.keys()), "different outputs produced")?;
    for (k, v) in &first {
        ensure(second[k] == *v, format!("{k} differs between runs"))?;
    }
    let commands = first.keys().filter(|k| k.starts_with("stdout:")).count();
    let files = first.len() - commands;
    Ok(format!(
        "{commands} invocations, {files} files byte-identical across runs"
    ))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("table5-reproduction", table5_reproduction),
        ("worked-bandwidth-example", worked_example),
        ("merge-oracle-equivalence", merge_oracle),
        ("fast-path-equivalence", fast_path_equivalence),
        ("benefit-identity-and-monotonicity", benefit_identity),
        ("adaptivity", adaptivity),
        ("information-completeness", information_completeness),
        ("wire-roundtrip-loopback-fuzz", wire_roundtrip),
        ("cli-determinism", determinism),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

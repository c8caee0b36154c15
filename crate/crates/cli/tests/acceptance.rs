//! Acceptance run: every criterion at its stated tolerance, one PASS/FAIL
//! line each. Exits non-zero when any criterion fails.

mod common;

use std::path::Path;
use std::time::{Duration, Instant};

use common::{fixture, m2vscope, s, spec_dir, write_fixture};
use m2vscope::bitio::BitCursor;
use m2vscope::fixtures::oracle::Samples;
use m2vscope::fixtures::{generate, BitWriter, FixtureSpec, GeneratedStream};
use m2vscope::framestore::FramePicture;
use m2vscope::motion::MotionVector;
use m2vscope::transform::{idct_8x8, inverse_quantize, inverse_scan, QuantMatrix, QuantParams, ScanMatrix};
use m2vscope::vlc::{decode_symbol, tables, RunLevel, VlcEntry};
use m2vscope::{decode_stream, DecodeOptions, DecodeOutput, Strictness};
use num_rational::Ratio;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn criterion(n: u32, title: &str, limit: Option<Duration>, f: impl FnOnce() -> Check) -> bool {
    let started = Instant::now();
    let mut result = f();
    let elapsed = started.elapsed();
    if let (Ok(detail), Some(limit)) = (&result, limit) {
        if elapsed > limit {
            result = Err(format!("{detail}; took {elapsed:.2?}, limit {limit:?}"));
        }
    }
    match &result {
        Ok(detail) => println!("PASS {n:>2} {title}: {detail} [{:.2}s]", elapsed.as_secs_f64()),
        Err(why) => println!("FAIL {n:>2} {title}: {why} [{:.2}s]", elapsed.as_secs_f64()),
    }
    result.is_ok()
}

fn decode(g: &GeneratedStream, strictness: Strictness) -> Result<DecodeOutput, String> {
    let options = DecodeOptions {
        strictness,
        ..DecodeOptions::default()
    };
    decode_stream(&g.bytes, &options).map_err(|e| e.to_string())
}

fn all_spec_names() -> Vec<String> {
    let mut names: Vec<String> = std::fs::read_dir(spec_dir())
        .unwrap()
        .map(|e| e.unwrap().path().file_stem().unwrap().to_string_lossy().into_owned())
        .collect();
    names.sort();
    names
}

// 1 ---------------------------------------------------------------------

fn scan_bijection() -> Check {
    for (name, scan) in [("zigzag", ScanMatrix::zigzag()), ("alternate", ScanMatrix::alternate())] {
        let mut hits = [0u32; 64];
        for serial in 0..64u8 {
            // A unit coefficient at one serial position.
            let block = inverse_scan(&[RunLevel::new(serial, 1)], scan);
            let cells: Vec<usize> = (0..64).filter(|&i| block[i] != 0).collect();
            ensure!(cells.len() == 1, "{name}: serial {serial} lit {} cells", cells.len());
            hits[cells[0]] += 1;
        }
        ensure!(hits.iter().all(|&h| h == 1), "{name}: cells hit {hits:?}");
    }
    Ok("zigzag and alternate each hit all 64 cells exactly once".into())
}

// 2 ---------------------------------------------------------------------

/// Direct reconstruction of one block: the per-coefficient formula,
/// saturation, then the sum-parity toggle on the last coefficient.
fn direct_dequantize(qf: &[i32; 64], intra: bool, w: i64, qs: i64, precision: u8) -> [i32; 64] {
    let mut f = [0i64; 64];
    for i in 0..64 {
        let q = i64::from(qf[i]);
        let v = if intra && i == 0 {
            q * [8, 4, 2, 1][usize::from(precision - 8)]
        } else {
            let k = if intra { 0 } else { q.signum() };
            let num = (2 * q + k) * w * qs;
            num.signum() * (num.abs() / 32)
        };
        f[i] = v.clamp(-2048, 2047);
    }
    if f.iter().sum::<i64>().rem_euclid(2) == 0 {
        f[63] = if f[63].rem_euclid(2) == 1 { f[63] - 1 } else { f[63] + 1 };
    }
    f.map(|v| v as i32)
}

fn inverse_quantization() -> Check {
    let mut cases = 0u64;
    let mut mismatches = 0u64;
    for w in [1u8, 8, 16, 255] {
        let weights = QuantMatrix([w; 64]);
        for qs in [2, 16, 62] {
            for intra in [true, false] {
                for precision in 8..=11u8 {
                    let params = QuantParams {
                        intra,
                        weights: &weights,
                        quantiser_scale: qs,
                        intra_dc_precision: precision,
                    };
                    for value in -60..=60 {
                        // Every coefficient at the value, then the value at
                        // each single position.
                        let mut blocks = vec![[value; 64]];
                        for pos in 0..64 {
                            let mut b = [0; 64];
                            b[pos] = value;
                            blocks.push(b);
                        }
                        for block in blocks {
                            let got = inverse_quantize(&block, &params).block;
                            let want = direct_dequantize(&block, intra, i64::from(w), i64::from(qs), precision);
                            cases += 1;
                            if got != want {
                                mismatches += 1;
                            }
                        }
                    }
                }
            }
        }
    }
    ensure!(mismatches == 0, "{mismatches} of {cases} blocks differ");
    Ok(format!("{cases} blocks ({} coefficients), 0 mismatches", cases * 64))
}

// 3 ---------------------------------------------------------------------

fn direct_idct(f: &[i32; 64], cos: &[[f64; 8]; 8]) -> [i32; 64] {
    let c = |u: usize| if u == 0 { std::f64::consts::FRAC_1_SQRT_2 } else { 1.0 };
    std::array::from_fn(|idx| {
        let (y, x) = (idx / 8, idx % 8);
        let mut sum = 0.0;
        for v in 0..8 {
            for u in 0..8 {
                sum += c(u) * c(v) * f64::from(f[v * 8 + u]) * cos[x][u] * cos[y][v];
            }
        }
        ((sum / 4.0).round() as i32).clamp(-256, 255)
    })
}

fn idct_accuracy() -> Check {
    let cos: [[f64; 8]; 8] = std::array::from_fn(|x| {
        std::array::from_fn(|u| ((2 * x + 1) as f64 * u as f64 * std::f64::consts::PI / 16.0).cos())
    });
    let mut rng = ChaCha8Rng::seed_from_u64(0x1dc7);
    let mut worst = 0;
    let blocks = 12_000;
    for n in 0..blocks {
        let block: [i32; 64] = match n % 3 {
            0 => std::array::from_fn(|_| rng.random_range(-2048..=2047)),
            1 => std::array::from_fn(|_| rng.random_range(-256..=255)),
            _ => {
                let mut b = [0; 64];
                for _ in 0..rng.random_range(1..8) {
                    b[rng.random_range(0..64)] = rng.random_range(-2048..=2047);
                }
                b
            }
        };
        let got = idct_8x8(&block).block;
        let want = direct_idct(&block, &cos);
        let d = got.iter().zip(&want).map(|(a, b)| (a - b).abs()).max().unwrap();
        ensure!(d <= 1, "block {n} deviates by {d}");
        worst = worst.max(d);
    }
    let mut dc = [0; 64];
    dc[0] = 8;
    let ones = idct_8x8(&dc).block;
    ensure!(ones.iter().all(|&v| v == 1), "F(0,0)=8 gave {ones:?}");
    Ok(format!("{blocks} blocks, max deviation {worst}; F(0,0)=8 gives all ones"))
}

// 4 ---------------------------------------------------------------------

fn prefix_of(a: &VlcEntry, b: &VlcEntry) -> bool {
    a.len <= b.len && b.code >> (b.len - a.len) == a.code
}

fn vlc_round_trip() -> Check {
    let mut entries = 0;
    for table in tables().all() {
        let all = table.entries();
        for (i, a) in all.iter().enumerate() {
            for (j, b) in all.iter().enumerate() {
                ensure!(i == j || !prefix_of(a, b), "{}: {} prefixes {}", table.name(), a.bit_string(), b.bit_string());
            }
            for tail in [0u32, 0xFF_FFFF, 0xA5_A5A5] {
                let mut w = BitWriter::new();
                w.put_vlc(*a);
                w.put_bits(tail, 24);
                let bytes = w.into_bytes();
                let mut cursor = BitCursor::new(&bytes);
                let symbol = decode_symbol(&mut cursor, table).map_err(|e| format!("{}: {e}", table.name()))?;
                ensure!(symbol == a.symbol, "{}: {} decoded as {symbol:?}", table.name(), a.bit_string());
                ensure!(
                    cursor.bits_consumed() == u64::from(a.len),
                    "{}: {} consumed {} bits",
                    table.name(),
                    a.bit_string(),
                    cursor.bits_consumed()
                );
            }
            entries += 1;
        }
    }
    Ok(format!("{entries} entries in {} tables round-trip; all prefix-free", tables().all().len()))
}

// 5 ---------------------------------------------------------------------

fn max_difference(a: &FramePicture, b: &FramePicture) -> u8 {
    (0..3)
        .flat_map(|c| a.plane(c).data().iter().zip(b.plane(c).data()).map(|(x, y)| x.abs_diff(*y)))
        .max()
        .unwrap_or(0)
}

fn golden_decode() -> Check {
    let specs = [
        ("i_flat", 0),
        ("i_ac_basis", 1),
        ("ip_fullpel", 1),
        ("ip_halfpel", 1),
        ("ipb_reorder", 1),
        ("interlaced_field_in_frame", 1),
        ("field_pictures", 1),
        ("quant_variants", 1),
    ];
    for (name, tolerance) in specs {
        let g = fixture(name);
        let out = decode(&g, Strictness::Strict)?;
        let names: Vec<String> = out.frames.iter().map(|f| f.name()).collect();
        ensure!(names == g.display_names, "{name}: display order {names:?}");
        ensure!(out.frames.len() == g.frames.len(), "{name}: frame count");
        for (i, (got, want)) in out.frames.iter().zip(&g.frames).enumerate() {
            let d = max_difference(got, want);
            ensure!(d <= tolerance, "{name}: frame {i} off by {d}");
        }
    }
    let reorder = fixture("ipb_reorder");
    let trace = ["I0", "B1", "B2", "P3", "B4", "B5", "P6"];
    ensure!(reorder.display_names == trace, "reorder trace {:?}", reorder.display_names);
    Ok(format!("{} specs match (flat exact, others within 1); IPBBPBB displays as {}", specs.len(), trace.join(" ")))
}

// 6 ---------------------------------------------------------------------

fn check_accounting(name: &str, g: &GeneratedStream, out: &DecodeOutput) -> Result<usize, String> {
    let r = out.report(name).map_err(|e| e.to_string())?;
    let total = g.end_bit - g.first_picture_bit;
    let sum: u64 = r.per_frame.iter().map(|f| f.bits).sum();
    ensure!(sum == total, "{name}: frames sum to {sum}, stream has {total}");
    ensure!(
        Ratio::from_integer(r.min_bits) <= r.avg_bits && r.avg_bits <= Ratio::from_integer(r.max_bits),
        "{name}: min {} avg {} max {}",
        r.min_bits,
        r.avg_bits,
        r.max_bits
    );
    for (k, f) in r.per_frame.iter().enumerate() {
        ensure!(f.decode_time == Ratio::new(k as u64, 25), "{name}: frame {k} at {}", f.decode_time);
    }
    Ok(r.per_frame.len())
}

fn bandwidth_accounting() -> Check {
    let mut frames = 0;
    let names = all_spec_names();
    for name in &names {
        let g = fixture(name);
        frames += check_accounting(name, &g, &decode(&g, Strictness::Tolerant)?)?;
    }
    Ok(format!("{} fixtures, {frames} frames: sums exact, min <= avg <= max, t_k = k/25 s", names.len()))
}

// 7 ---------------------------------------------------------------------

fn vbv() -> Check {
    let g = fixture("vbv_equilibrium");
    let r = decode(&g, Strictness::Strict)?.report("vbv").map_err(|e| e.to_string())?;
    let per_frame = r.bit_rate / 25;
    ensure!(r.per_frame.len() >= 25, "only {} frames", r.per_frame.len());
    ensure!(r.per_frame.iter().all(|f| f.bits == per_frame), "pictures are not all {per_frame} bits");
    let level = r.per_frame[0].vbv_fullness_bits;
    ensure!(
        r.per_frame.iter().all(|f| f.vbv_fullness_bits == level && !f.vbv_underflow && !f.vbv_overflow),
        "fullness drifts"
    );

    let g = fixture("vbv_underflow");
    let out = decode(&g, Strictness::Strict)?;
    let r = out.report("underflow").map_err(|e| e.to_string())?;
    ensure!(r.per_frame.len() == g.frame_bits.len(), "decoding stopped early");
    let flagged: Vec<u64> = r.per_frame.iter().filter(|f| f.vbv_underflow).map(|f| f.frame_index).collect();
    ensure!(flagged == [4], "underflow flagged at {flagged:?}");
    Ok(format!(
        "{} frames of {per_frame} bits hold {level} bits; oversized frame 4 flags underflow, all {} frames decoded",
        30,
        r.per_frame.len()
    ))
}

// 8 ---------------------------------------------------------------------

fn run_all_outputs(input: &Path, dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    std::fs::create_dir_all(dir).map_err(|e| e.to_string())?;
    let report = dir.join("report");
    let out = m2vscope(&["--input", s(input), "--report", "both", "--report-path", s(&report), "--frame-dump", "y4m", "--frame-dump-path", s(&dir.join("frames.y4m"))]);
    ensure!(out.status.success(), "run failed: {}", String::from_utf8_lossy(&out.stderr));
    let out = m2vscope(&["--input", s(input), "--frame-dump", "pgm", "--frame-dump-path", s(&dir.join("pgm"))]);
    ensure!(out.status.success(), "pgm run failed");
    let mut files: Vec<_> = walk(dir);
    files.sort();
    Ok(files
        .into_iter()
        .map(|p| (p.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&p).unwrap()))
        .collect())
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}

fn determinism() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut files = 0;
    for name in ["ipb_reorder", "corrupt_slice", "field_pictures"] {
        let (_, input) = write_fixture(tmp.path(), name);
        let a = run_all_outputs(&input, &tmp.path().join(format!("{name}_a")))?;
        let b = run_all_outputs(&input, &tmp.path().join(format!("{name}_b")))?;
        ensure!(a.len() == b.len(), "{name}: file sets differ");
        for ((pa, da), (pb, db)) in a.iter().zip(&b) {
            ensure!(pa == pb && da == db, "{name}: {pa} differs between runs");
        }
        files += a.len();
    }
    Ok(format!("{files} report and dump files byte-identical across two runs"))
}

// 9 ---------------------------------------------------------------------

fn oracle_variation(frame: &FramePicture, block: &[u8], x0: usize, y0: usize, rows: usize) -> u64 {
    let sq = |a: u8, b: u8| (i64::from(a) - i64::from(b)).pow(2) as u64;
    let mut v = 0;
    if y0 > 0 {
        v += (0..16).map(|x| sq(block[x], frame.y.get(x0 + x, y0 - 1))).sum::<u64>();
    }
    if x0 > 0 {
        v += (0..16).map(|y| sq(block[y * 16], frame.y.get(x0 - 1, y0 + y))).sum::<u64>();
    }
    if y0 / 16 + 1 < rows {
        v += (0..16).map(|x| sq(block[15 * 16 + x], frame.y.get(x0 + x, y0 + 16))).sum::<u64>();
    }
    v
}

fn resilience() -> Check {
    let g = fixture("corrupt_slice");
    let out = decode(&g, Strictness::Tolerant)?;
    check_accounting("corrupt_slice", &g, &out)?;
    ensure!(out.concealment.len() == 1, "{} concealment events", out.concealment.len());
    let event = &out.concealment[0];
    let got: Vec<usize> = event.macroblocks.iter().map(|m| m.address).collect();
    let want = &g.pictures[1].corrupted_macroblocks;
    ensure!(&got == want, "concealed {got:?}, corrupted {want:?}");

    let (reference, frame) = (&out.frames[0], &out.frames[1]);
    let (width, height) = (frame.width(), frame.height());
    let samples = Samples {
        data: reference.y.data(),
        width,
        height,
        first_row: 0,
        row_step: 1,
    };
    let mb_width = width / 16;
    for mb in &event.macroblocks {
        let (Some(mv), Some(variation)) = (mb.vector, mb.variation) else {
            return Err(format!("macroblock {} concealed without a vector", mb.address));
        };
        let (x0, y0) = (16 * (mb.address % mb_width), 16 * (mb.address / mb_width));
        let predicted = samples.predict(x0, y0, 16, 16, [mv.x, mv.y]).ok_or("chosen vector leaves the picture")?;
        let written: Vec<u8> = (0..256).map(|i| frame.y.get(x0 + i % 16, y0 + i / 16)).collect();
        ensure!(predicted == written, "macroblock {} is not the chosen prediction", mb.address);
        let v = oracle_variation(frame, &written, x0, y0, height / 16);
        ensure!(v == variation, "macroblock {}: variation {variation}, oracle {v}", mb.address);
        let zero = samples.predict(x0, y0, 16, 16, [0, 0]).unwrap();
        let v_zero = oracle_variation(frame, &zero, x0, y0, height / 16);
        ensure!(v <= v_zero || mv == MotionVector::ZERO, "macroblock {}: zero vector scores lower", mb.address);
    }

    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (_, input) = write_fixture(tmp.path(), "corrupt_slice");
    let strict = m2vscope(&["--input", s(&input), "--strict"]);
    ensure!(strict.status.code() == Some(2), "strict exit {:?}", strict.status.code());
    Ok(format!(
        "row {} ({} macroblocks) concealed with argmin boundary variation, accounting exact; strict exits 2",
        event.mb_row,
        got.len()
    ))
}

// 10 --------------------------------------------------------------------

fn scale() -> Check {
    let text = std::fs::read_to_string(spec_dir().join("scale_16k.toml")).unwrap();
    let spec = FixtureSpec::from_toml(&text).map_err(|e| e.to_string())?;
    let g = generate(&spec).map_err(|e| e.to_string())?;
    let r = decode(&g, Strictness::Strict)?.report("scale").map_err(|e| e.to_string())?;
    ensure!(r.frame_period == Ratio::new(1, 25), "frame period {}", r.frame_period);
    let avg = r.avg_bits_f64();
    ensure!((12_200.0..=17_907.0).contains(&avg), "average {avg:.1} bits");
    Ok(format!(
        "{} frames at 25 fps: min {} avg {:.1} max {} bits",
        r.per_frame.len(),
        r.min_bits,
        avg,
        r.max_bits
    ))
}

fn main() {
    let secs = Duration::from_secs;
    let results = [
        criterion(1, "scan bijection", Some(secs(1)), scan_bijection),
        criterion(2, "inverse quantization oracle", Some(secs(10)), inverse_quantization),
        criterion(3, "IDCT accuracy", Some(secs(30)), idct_accuracy),
        criterion(4, "VLC round trip", Some(secs(5)), vlc_round_trip),
        criterion(5, "golden decode", Some(secs(30)), golden_decode),
        criterion(6, "bandwidth accounting", None, bandwidth_accounting),
        criterion(7, "VBV equilibrium and underflow", None, vbv),
        criterion(8, "determinism", None, determinism),
        criterion(9, "error resilience", None, resilience),
        criterion(10, "scale sanity", None, scale),
    ];
    let failed = results.iter().filter(|ok| !**ok).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

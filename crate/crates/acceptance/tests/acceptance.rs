//! One PASS/FAIL line per acceptance criterion.
//!
//! `PANOECG_ACCEPT_ONLY=3,5` runs a subset. Failing criteria are reported
//! but only fail the process under `PANOECG_ACCEPT_STRICT=1`.

use std::sync::OnceLock;
use std::time::Instant;

use panoecg::autodiff::gradcheck::{catalogue, run_check};
use panoecg::dataset::{read_record_bytes, record_to_bytes, MultiViewRecord};
use panoecg::experiments::{
    ablation, anypairs_policy, chest, deployment_policy, data_efficiency_sweep, deviation_study, eval_task, supervision_sweep,
    train_with, AblationRow, DeskSetup, DipoleOracle, Protocol, ViewSynthesizer,
};
use panoecg::metrics::{psnr_leads, Task, PSNR_CAP};
use panoecg::model::{GeoVtModel, Views};
use panoecg::nn::Binder;
use panoecg::train::{record_views, stack_leads, train_stage, Hooks};
use panoecg::{Seed, Tensor};
use panoecg_acceptance::*;
use rand::Rng;

struct Fixture {
    setup: DeskSetup,
    protocol: Protocol,
    records: Vec<MultiViewRecord>,
    base: OnceLock<GeoVtModel<f32>>,
}

impl Fixture {
    fn train(&self) -> Vec<&MultiViewRecord> {
        self.records[..N_TRAIN].iter().collect()
    }

    fn test(&self) -> Vec<&MultiViewRecord> {
        self.records[N_TRAIN..].iter().collect()
    }

    /// Stage I any-pairs model shared by criteria 3, 5, 6 and 7.
    fn base(&self) -> &GeoVtModel<f32> {
        self.base.get_or_init(|| {
            let policy = anypairs_policy(&self.protocol, &self.setup.stage1);
            let (m, _) = train_with(&self.setup.model, self.setup.seed, None, &self.train(), &self.setup.stage1, &policy)
                .expect("stage I training");
            m
        })
    }
}

fn views(angles: &[(f64, f64)]) -> Views {
    Views::new(
        angles.iter().map(|&(t, p)| panoecg::dipole::ViewAngle::deg(t, p)).collect(),
        (0..angles.len()).map(Some).collect(),
    )
}

fn signals(l: usize, t: usize, seed: u64) -> Tensor<f64> {
    let mut rng = Seed(seed).rng();
    let data: Vec<f64> = (0..l * t).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::from_f64(&[l, t], &data).unwrap()
}

fn c1() -> (bool, String) {
    let mut worst_name = "";
    let mut worst_ratio = 0.0;
    let mut failed = Vec::new();
    let checks = catalogue();
    for check in &checks {
        let err = run_check(check, 5, 0xacc);
        let ratio = err / check.tolerance;
        if ratio > worst_ratio {
            worst_ratio = ratio;
            worst_name = check.name;
        }
        if !(err < check.tolerance) {
            failed.push(format!("{} {err:.1e}", check.name));
        }
    }
    let detail = format!(
        "{} ops x 5 instances, worst {worst_name} at {worst_ratio:.1e} of tolerance{}",
        checks.len(),
        if failed.is_empty() { String::new() } else { format!("; failing {failed:?}") }
    );
    (failed.is_empty(), detail)
}

fn c2(fx: &Fixture) -> (bool, String) {
    let inputs = [0, 1, chest(24)];
    let mut min_psnr = f64::INFINITY;
    let mut max_err: f64 = 0.0;
    for r in fx.test().iter().take(5) {
        let held: Vec<usize> = (0..r.leads.len()).filter(|i| !inputs.contains(i)).collect();
        let t = r.n_samples();
        let x = stack_leads::<f64>(r, &inputs, 0..t);
        let y = <DipoleOracle as ViewSynthesizer<f64>>::synthesize_views(
            &DipoleOracle,
            &x,
            &record_views(r, &inputs),
            &record_views(r, &held),
        )
        .expect("oracle");
        let truth = stack_leads::<f64>(r, &held, 0..t);
        max_err = max_err.max(y.max_abs_diff(&truth));
        let p = psnr_leads(&y, &truth).expect("psnr");
        min_psnr = p.into_iter().fold(min_psnr, f64::min);
    }
    (
        min_psnr >= PSNR_CAP && max_err < 1e-5,
        format!("5 records x 45 held-out views from I, II, V24: min PSNR {min_psnr:.1} dB (>= 99), max |err| {max_err:.1e} (< 1e-5)"),
    )
}

fn c3(fx: &Fixture) -> (bool, String) {
    let m = fx.base();
    let test = fx.test();
    let syn = eval_task(m, &test, &fx.protocol, Task::Synthesis, None, "I", 0).unwrap().mean_psnr;
    let rec = eval_task(m, &test, &fx.protocol, Task::Reconstruction, None, "I", 0).unwrap().mean_psnr;
    (
        syn >= 25.0 && rec >= syn,
        format!("{} test subjects: synthesis {syn:.2} dB (>= 25), reconstruction {rec:.2} dB (>= synthesis); oracle ceiling {PSNR_CAP} dB", test.len()),
    )
}

fn c4(fx: &Fixture) -> (bool, String) {
    let pts = supervision_sweep(&fx.setup, &fx.train(), &fx.test(), &fx.protocol, &[3, 6, 9, 12]).unwrap();
    let syn: Vec<f64> = pts.iter().map(|p| p.synthesis.mean_psnr).collect();
    let rec: Vec<f64> = pts.iter().map(|p| p.reconstruction.mean_psnr).collect();
    let gap: Vec<f64> = rec.iter().zip(&syn).map(|(r, s)| r - s).collect();
    let ok = non_decreasing(&syn, 0.5) && spread(&rec) <= 2.0 && strictly_decreasing(&gap);
    let fmt = |xs: &[f64]| xs.iter().map(|x| format!("{x:.2}")).collect::<Vec<_>>().join("/");
    (
        ok,
        format!(
            "k=3/6/9/12 syn {} (non-decreasing, 0.5 slack), rec {} (spread {:.2} <= 2), gap {} (shrinking)",
            fmt(&syn),
            fmt(&rec),
            spread(&rec),
            fmt(&gap)
        ),
    )
}

/// Injected lead: V24, the most anterior recorded view.
// Lead I: the Stage II model leans on it most, so offsets there are visible.
const INJECTED: usize = 0;
const DEVIATION_RECORDS: usize = 8;

fn c5(fx: &Fixture) -> (bool, String) {
    let train = fx.train();
    let policy = deployment_policy(&fx.protocol, &fx.setup.stage2);
    let (m, _) = train_with(&fx.setup.model, fx.setup.seed, Some(fx.base()), &train, &fx.setup.stage2, &policy).unwrap();
    let m = &m;
    let test = fx.test();
    let recs = &test[..DEVIATION_RECORDS];
    let cfg = &fx.setup.stage3;
    let pts = deviation_study(m, recs, &fx.protocol, INJECTED, &[0.0, 10.0, 20.0, 30.0], cfg).unwrap();
    let baseline = pts[0].uncorrected;
    let pts_zero = pts[0].clone();
    let pts = &pts[1..];
    let unc: Vec<f64> = pts.iter().map(|p| p.uncorrected).collect();
    let cor: Vec<f64> = pts.iter().map(|p| p.corrected).collect();
    let rec: Vec<f64> = pts.iter().map(|p| p.recovery(baseline)).collect();
    let at20 = pts[1].fitted_dphi;
    let ok = strictly_decreasing(&unc)
        && rec.iter().all(|&r| r >= 0.8)
        && spread(&cor) <= 1.5
        && (at20 + 20.0).abs() <= 8.0
        && (pts_zero.corrected - baseline).abs() <= 0.5;
    let fmt = |xs: &[f64]| xs.iter().map(|x| format!("{x:.2}")).collect::<Vec<_>>().join("/");
    (
        ok,
        format!(
            "{DEVIATION_RECORDS} records, offsets 10/20/30: baseline {baseline:.2}, uncorrected {} (strictly decreasing), corrected {} (spread {:.2} <= 1.5), recovery {} (>= 0.8), fitted dphi at +20 {at20:.1} (within 8 of -20), zero-offset calibrated {:.2} (within 0.5)",
            fmt(&unc),
            fmt(&cor),
            spread(&cor),
            fmt(&rec),
            pts_zero.corrected
        ),
    )
}

fn c6(fx: &Fixture) -> (bool, String) {
    let test = fx.test();
    let rows = ablation(&fx.setup, &fx.train(), &test, &fx.protocol, &[AblationRow::A, AblationRow::B, AblationRow::D]).unwrap();
    let c = eval_task(fx.base(), &test, &fx.protocol, Task::Synthesis, None, "C", 0).unwrap().mean_psnr;
    let (a, b, d) = (rows[0].synthesis.mean_psnr, rows[1].synthesis.mean_psnr, rows[2].synthesis.mean_psnr);
    (
        a < b && b < c && d <= c + 0.3,
        format!("synthesis A {a:.2} < B {b:.2} < C {c:.2}; D {d:.2} <= C + 0.3"),
    )
}

fn c7(fx: &Fixture) -> (bool, String) {
    let dev = device_benchmark(60);
    let train: Vec<&MultiViewRecord> = dev[..50].iter().collect();
    let test: Vec<&MultiViewRecord> = dev[50..].iter().collect();
    let pts = data_efficiency_sweep(&fx.setup, fx.base(), &train, &test, &fx.protocol, &[0.01, 0.05, 0.1, 0.5, 1.0]).unwrap();
    let gaps: Vec<f64> = pts.iter().map(|p| p.gap()).collect();
    let ok = gaps.iter().all(|&g| g >= 0.0) && gaps[0] > gaps[gaps.len() - 1];
    let cells: Vec<String> = pts
        .iter()
        .map(|p| format!("{}%:{:.2}/{:.2}", p.fraction * 100.0, p.pretrained, p.scratch))
        .collect();
    (
        ok,
        format!("pretrained/scratch {} (pretrained >= scratch, gap 1% {:.2} > gap 100% {:.2})", cells.join(" "), gaps[0], gaps[gaps.len() - 1]),
    )
}

fn c8(fx: &Fixture) -> (bool, String) {
    let mut notes = Vec::new();
    let r = &fx.records[0];
    let bytes = record_to_bytes(r).unwrap();
    let back = read_record_bytes(&bytes).unwrap();
    let pecg = &back == r && record_to_bytes(&back).unwrap() == bytes;
    notes.push(format!("PECG round trip {}", if pecg { "bit-exact" } else { "differs" }));

    let mut m = GeoVtModel::<f32>::new(fx.setup.model.clone(), Seed(81)).unwrap();
    m.set_deviations(&[(1.25, -0.5), (0.0, 3.0)]);
    m.refresh_spectral(2);
    let mut buf = Vec::new();
    m.save(&mut buf).unwrap();
    let loaded = GeoVtModel::<f32>::load(&buf[..]).unwrap();
    let inputs = &fx.protocol.inputs;
    let x = stack_leads::<f32>(r, inputs, 0..512);
    let (rv, qv) = (record_views(r, inputs), record_views(r, &fx.protocol.synthesis));
    let ckpt = m.synthesize(&x, &rv, &qv).unwrap().data() == loaded.synthesize(&x, &rv, &qv).unwrap().data();
    notes.push(format!("checkpoint forward {}", if ckpt { "bit-identical" } else { "differs" }));

    let mut cfg = fx.setup.stage1.clone();
    cfg.epochs = 2;
    let few: Vec<&MultiViewRecord> = fx.records[..8].iter().collect();
    let policy = anypairs_policy(&fx.protocol, &cfg);
    let run = || {
        let mut m = GeoVtModel::<f32>::new(fx.setup.model.clone(), Seed(82)).unwrap();
        let rep = train_stage(&mut m, &few, &cfg, &policy, &mut Hooks::default()).unwrap();
        rep.epochs.iter().map(|e| e.loss.to_bits()).collect::<Vec<_>>()
    };
    let seeded = run() == run();
    notes.push(format!("seeded losses {}", if seeded { "identical" } else { "differ" }));
    (pecg && ckpt && seeded, notes.join(", "))
}

fn c9(fx: &Fixture) -> (bool, String) {
    let rec = [(90.0, 90.0), (150.0, 90.0), (90.0, 11.0), (113.0, -55.0)];
    let qry = [(60.0, 20.0), (120.0, -30.0), (45.0, 170.0)];
    let mut m = GeoVtModel::<f64>::new(fx.setup.model.clone(), Seed(91)).unwrap();
    m.set_deviations(&[(1.0, -2.0), (0.5, 0.0), (-3.0, 1.0), (2.0, 2.0)]);
    let (rv, qv) = (views(&rec), Views::virtual_views(qry.iter().map(|&(t, p)| panoecg::dipole::ViewAngle::deg(t, p)).collect()));
    let t = 256;
    let x = signals(4, t, 92);

    let y = m.synthesize(&x, &rv, &qv).unwrap();
    let perm = [2, 0, 3, 1];
    let xp: Vec<f64> = perm.iter().flat_map(|&i| x.row(i).to_vec()).collect();
    let yp = m.synthesize(&Tensor::from_f64(&[4, t], &xp).unwrap(), &rv.subset(&perm), &qv).unwrap();
    let perm_err = y.max_abs_diff(&yp);

    let a = m.attention(&rv, &qv).unwrap();
    let row_err = (0..qv.len())
        .map(|r| (a.row(r).iter().sum::<f64>() - 1.0).abs())
        .fold(0.0, f64::max);

    let grab = |x: &Tensor<f64>| {
        let mut b = Binder::inference(&m.store);
        let xv = b.graph.constant(x.clone());
        let _ = m.forward(&mut b, xv, &rv, &qv).unwrap();
        let fk = m.embed(&mut b, &rv).unwrap();
        let fq = m.embed(&mut b, &qv).unwrap();
        let g = m.gaa(&mut b, fq, fk).unwrap();
        b.graph.value(g).clone()
    };
    let signal_free = grab(&x).data() == grab(&signals(4, t, 93).map(|v| v * 40.0)).data();

    m.set_gate_logits(f64::NEG_INFINITY);
    let g1 = m.synthesize(&x, &rv, &qv).unwrap();
    let g2 = m.synthesize(&signals(4, t, 94), &rv, &qv).unwrap();
    let closed = g1 == g2;

    (
        perm_err <= 1e-5 && row_err <= 1e-6 && signal_free && closed,
        format!(
            "permutation {perm_err:.1e} (<= 1e-5), row sums {row_err:.1e} (<= 1e-6), attention signal-free {signal_free}, closed gates exact {closed}"
        ),
    )
}

mod service {
    use std::sync::Arc;
    use std::time::Duration;

    use axum::body::{Body, Bytes};
    use axum::http::{Request, StatusCode};
    use axum::Router;
    use http_body_util::BodyExt;
    use panoecg::dataset::{panobench_synthetic, record_to_bytes};
    use panoecg::model::GeoVtModel;
    use panoecg_service::{router, AppState, ServiceConfig};
    use serde_json::Value;
    use tower::ServiceExt;

    pub struct Checks(pub Vec<String>, pub usize);

    impl Checks {
        fn check(&mut self, ok: bool, what: &str) {
            self.1 += 1;
            if !ok {
                self.0.push(what.to_string());
            }
        }
    }

    async fn call(app: &Router, method: &str, uri: &str, body: Vec<u8>) -> (StatusCode, Bytes) {
        let req = Request::builder().method(method).uri(uri).body(Body::from(body)).unwrap();
        let resp = app.clone().oneshot(req).await.unwrap();
        let s = resp.status();
        (s, resp.into_body().collect().await.unwrap().to_bytes())
    }

    fn json(b: &Bytes) -> Value {
        serde_json::from_slice(b).unwrap_or(Value::Null)
    }

    fn pecg(duration: f64, seed: u64) -> Vec<u8> {
        record_to_bytes(&panobench_synthetic(seed, 1, 250.0, duration).unwrap()[0]).unwrap()
    }

    async fn state_of(app: &Router, sid: &str) -> Value {
        json(&call(app, "GET", &format!("/sessions/{sid}"), vec![]).await.1)
    }

    async fn settle(app: &Router, sid: &str) -> Value {
        for _ in 0..3000 {
            let v = state_of(app, sid).await;
            if v["status"] != "running" {
                return v;
            }
            tokio::time::sleep(Duration::from_millis(20)).await;
        }
        Value::Null
    }

    async fn session(app: &Router, c: &mut Checks, duration: f64, seed: u64) -> String {
        let (s, b) = call(app, "POST", "/records", pecg(duration, seed)).await;
        c.check(s == StatusCode::CREATED, "upload is 201");
        let rid = json(&b)["record_id"].as_str().unwrap_or_default().to_string();
        let body = serde_json::json!({ "record_id": rid, "checkpoint_id": "m" }).to_string().into_bytes();
        let (_, b) = call(app, "POST", "/sessions", body).await;
        json(&b)["session_id"].as_str().unwrap_or_default().to_string()
    }

    pub async fn run(model: GeoVtModel<f32>) -> Checks {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = ServiceConfig::new(dir.path().to_path_buf(), 0);
        cfg.workers = 2;
        let app = router(AppState::open(cfg, vec![("m".into(), model)]).unwrap());
        let mut c = Checks(Vec::new(), 0);

        let (s, _) = call(&app, "POST", "/records", b"not a record".to_vec()).await;
        c.check(s == StatusCode::BAD_REQUEST, "malformed upload is 400");
        let sid = session(&app, &mut c, 10.0, 41).await;
        c.check(state_of(&app, &sid).await["status"] == "idle", "new session is idle");
        let (s, _) = call(&app, "GET", "/sessions/nope", vec![]).await;
        c.check(s == StatusCode::NOT_FOUND, "unknown session is 404");

        for q in ["theta=181&phi=0", "theta=90&phi=999", "theta=90&phi=0&source=x"] {
            let (s, _) = call(&app, "GET", &format!("/sessions/{sid}/synthesize?{q}"), vec![]).await;
            c.check(s == StatusCode::UNPROCESSABLE_ENTITY, &format!("{q} is 422"));
        }
        let (s, _) = call(&app, "GET", &format!("/sessions/{sid}/panorama?grid=64x64"), vec![]).await;
        c.check(s == StatusCode::UNPROCESSABLE_ENTITY, "oversized panorama is 422");
        let short = session(&app, &mut c, 5.0, 42).await;
        let (s, _) = call(&app, "POST", &format!("/sessions/{short}/calibrate"), vec![]).await;
        c.check(s == StatusCode::UNPROCESSABLE_ENTITY, "short record calibration is 422");

        let uri = format!("/sessions/{sid}/synthesize?theta=100&phi=20");
        let (_, before) = call(&app, "GET", &uri, vec![]).await;
        let (_, again) = call(&app, "GET", &uri, vec![]).await;
        c.check(before == again, "repeated synthesis is byte-identical");
        let (_, pano) = call(&app, "GET", &format!("/sessions/{sid}/panorama?grid=1x1"), vec![]).await;
        let (_, single) = call(&app, "GET", &format!("/sessions/{sid}/synthesize?theta=90&phi=0"), vec![]).await;
        c.check(json(&pano)[0]["samples"] == json(&single)["samples"], "1x1 panorama equals one synthesis");

        let (s, _) = call(&app, "POST", &format!("/sessions/{sid}/calibrate"), vec![]).await;
        c.check(s == StatusCode::ACCEPTED, "calibrate is 202");
        let (s, _) = call(&app, "POST", &format!("/sessions/{sid}/calibrate"), vec![]).await;
        c.check(s == StatusCode::CONFLICT, "second calibrate is 409");
        c.check(state_of(&app, &sid).await["status"] == "running", "status is running");
        let app = Arc::new(app);
        let mut hammers = Vec::new();
        for _ in 0..4 {
            let (app, uri, sid) = (app.clone(), uri.clone(), sid.clone());
            hammers.push(tokio::spawn(async move {
                let mut seen = Vec::new();
                loop {
                    seen.push(call(&app, "GET", &uri, vec![]).await);
                    if state_of(&app, &sid).await["status"] != "running" {
                        return seen;
                    }
                }
            }));
        }
        let mut seen = Vec::new();
        for h in hammers {
            seen.extend(h.await.unwrap());
        }
        c.check(settle(&app, &sid).await["status"] == "done", "calibration reaches done");
        let (_, after) = call(&app, "GET", &uri, vec![]).await;
        c.check(after != before, "calibration changes synthesis");
        c.check(
            seen.iter().all(|(s, b)| *s == StatusCode::OK && (*b == before || *b == after)),
            "no torn reads while calibrating",
        );
        c
    }
}

fn c10() -> (bool, String) {
    let mut cfg = panoecg::model::ModelConfig::with_channels(8);
    cfg.blocks = 1;
    cfg.embed_dim = 16;
    cfg.attn_dim = 16;
    let model = GeoVtModel::new(cfg, Seed(5)).unwrap();
    let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build().unwrap();
    let c = rt.block_on(service::run(model));
    let detail = if c.0.is_empty() { String::new() } else { format!("; failed: {}", c.0.join(", ")) };
    (c.0.is_empty(), format!("{}/{} contract checks{detail}", c.1 - c.0.len(), c.1))
}

fn main() {
    let only = parse_only(std::env::var("PANOECG_ACCEPT_ONLY").ok().as_deref());
    let strict = std::env::var("PANOECG_ACCEPT_STRICT").is_ok_and(|v| v == "1");
    let wanted = |id: u8| only.as_ref().is_none_or(|o| o.contains(&id));

    let fx = Fixture {
        setup: DeskSetup::default(),
        protocol: Protocol::desk(),
        records: benchmark(),
        base: OnceLock::new(),
    };
    let criteria: [(u8, &'static str, &dyn Fn() -> (bool, String)); 10] = [
        (1, "autodiff gradients", &c1),
        (2, "oracle exactness", &|| c2(&fx)),
        (3, "desk-scale trainability", &|| c3(&fx)),
        (4, "supervision sweep trend", &|| c4(&fx)),
        (5, "deviation correction", &|| c5(&fx)),
        (6, "stage ablation ordering", &|| c6(&fx)),
        (7, "data-efficiency ordering", &|| c7(&fx)),
        (8, "determinism and formats", &|| c8(&fx)),
        (9, "structural invariants", &|| c9(&fx)),
        (10, "service contract", &c10),
    ];
    let mut outcomes = Vec::new();
    for (id, name, run) in criteria {
        if !wanted(id) {
            continue;
        }
        let t0 = Instant::now();
        let (pass, detail) = run();
        let o = Outcome { id, name, pass, detail, elapsed: t0.elapsed() };
        println!("{o}");
        outcomes.push(o);
    }
    let passed = outcomes.iter().filter(|o| o.pass).count();
    println!("acceptance: {passed}/{} criteria passed", outcomes.len());
    if strict && passed < outcomes.len() {
        std::process::exit(1);
    }
}

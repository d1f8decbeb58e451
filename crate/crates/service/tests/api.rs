//! The HTTP API, driven in-process.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rsm_core::corrections::{self, Correction, CorrectionKind};
use rsm_core::repair::RepairConfig;
use rsm_core::trace::Trace;
use rsm_core::{Label, ParameterMap};
use rsm_service::{router, App, Projection, WINDOW};
use rsm_sim::fixtures::{self, first_transition, KICK_READY};
use rsm_sim::grid::GridSpec;
use rsm_sim::{corpus, run_episode, Scenario, Task};
use serde_json::{json, Value};
use tower::ServiceExt;

struct Resp {
    status: StatusCode,
    location: Option<String>,
    body: String,
}

impl Resp {
    fn json(&self) -> Value {
        serde_json::from_str(&self.body).unwrap_or_else(|e| panic!("{e}: {}", self.body))
    }
}

async fn call(app: &Router, method: &str, uri: &str, body: impl Into<String>) -> Resp {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(Body::from(body.into()))
        .unwrap();
    let r = app.clone().oneshot(req).await.unwrap();
    let status = r.status();
    let location = r.headers().get("location").map(|v| v.to_str().unwrap().to_string());
    let bytes = r.into_body().collect().await.unwrap().to_bytes();
    Resp { status, location, body: String::from_utf8(bytes.to_vec()).unwrap() }
}

async fn get(app: &Router, uri: &str) -> Resp {
    call(app, "GET", uri, "").await
}

async fn create(app: &Router, req: Value) -> String {
    let r = call(app, "POST", "/api/v1/sessions", req.to_string()).await;
    assert_eq!(r.status, StatusCode::CREATED, "{}", r.body);
    r.json()["id"].as_str().unwrap().to_string()
}

async fn running_example(app: &Router) -> String {
    create(
        app,
        json!({
            "rsm": common::ATTACKER_SIMPLE,
            "name": "attacker_simple",
            "params": common::example_params(),
            "trace": common::example_trace().to_jsonl(),
        }),
    )
    .await
}

/// Posts a repair and polls it to completion.
async fn repair(app: &Router, id: &str, cfg: &str) -> Value {
    let r = call(app, "POST", &format!("/api/v1/sessions/{id}/repair"), cfg).await;
    assert_eq!(r.status, StatusCode::ACCEPTED, "{}", r.body);
    let loc = r.location.unwrap();
    for _ in 0..2000 {
        let j = get(app, &loc).await.json();
        match j["status"].as_str().unwrap() {
            "queued" | "running" => tokio::time::sleep(Duration::from_millis(5)).await,
            _ => return j,
        }
    }
    panic!("repair did not finish");
}

fn premature() -> (Trace, usize) {
    let t = corpus::attacker();
    let p = fixtures::attacker_premature();
    GridSpec::attacker()
        .scenarios()
        .into_iter()
        .find_map(|(_, s)| {
            let ep = run_episode(&t, &p, &s).unwrap();
            (!ep.success).then(|| first_transition(&ep.trace, "KICK").map(|k| (ep.trace, k))).flatten()
        })
        .unwrap()
}

#[tokio::test]
async fn running_example_end_to_end() {
    let app = router(App::new(2));
    let id = running_example(&app).await;
    let base = format!("/api/v1/sessions/{id}");

    // no corrections: the identity
    let j = repair(&app, &id, "").await;
    assert_eq!(j["status"], "done");
    let sols: Value = get(&app, &format!("{base}/solutions")).await.json();
    assert!(sols["solutions"][0]["adjustments"].as_object().unwrap().values().all(|v| v == 0.0));

    let r = call(&app, "POST", &format!("{base}/corrections"), r#"{"kind":"immediate","t":5,"state":"KICK"}"#).await;
    assert_eq!(r.status, StatusCode::CREATED, "{}", r.body);
    assert_eq!(serde_json::from_str::<Correction>(&r.body).unwrap(), common::c5());
    assert_eq!(get(&app, &format!("{base}/corrections")).await.body, corrections::to_json(&[common::c5()]));

    let j = repair(&app, &id, r#"{"seed": 3}"#).await;
    assert_eq!((j["id"].as_u64(), j["status"].as_str()), (Some(1), Some("done")));
    // same bytes as the command line
    let cfg = RepairConfig { seed: 3, ..Default::default() };
    let cli = rsm_cli::repair(&common::attacker(), &common::example_params(), &common::example_trace(), &[common::c5()], &cfg)
        .unwrap();
    assert_eq!(get(&app, &format!("{base}/solutions")).await.body, cli.to_json());

    assert_eq!(call(&app, "POST", &format!("{base}/solutions/0/apply"), "").await.status, StatusCode::NOT_FOUND);
    let r = call(&app, "POST", &format!("{base}/solutions/1/apply"), "").await;
    assert_eq!(r.status, StatusCode::CREATED);
    assert_eq!(r.location.as_deref(), Some(format!("{base}/params/1").as_str()));
    let p: ParameterMap = serde_json::from_str(&r.body).unwrap();
    assert_eq!(p, cli.solutions[0].params);
    assert_eq!(serde_json::from_str::<ParameterMap>(&get(&app, &format!("{base}/params")).await.body).unwrap(), p);
    let v0: ParameterMap = serde_json::from_str(&get(&app, &format!("{base}/params/0")).await.body).unwrap();
    assert_eq!(v0, common::example_params());
    let s = get(&app, &base).await.json();
    assert_eq!((s["version"].as_u64(), s["corrections"].as_u64()), (Some(1), Some(1)));
}

#[tokio::test]
async fn bad_requests() {
    let app = router(App::new(1));
    let id = running_example(&app).await;
    let base = format!("/api/v1/sessions/{id}");
    for bad in [
        r#"{"kind":"immediate","t":6,"state":"KICK"}"#,
        r#"{"kind":"immediate","t":2,"state":"DANCE"}"#,
        r#"{"kind":"negative","t":2,"state":"KICK","params":["nope"]}"#,
        r#"{"kind":"sideways","t":2,"state":"KICK"}"#,
        "not json",
    ] {
        let r = call(&app, "POST", &format!("{base}/corrections"), bad).await;
        assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY, "{bad}");
        assert!(r.json()["error"].is_string());
    }
    assert_eq!(get(&app, &format!("{base}/corrections")).await.body, corrections::to_json(&[]));
    let r = call(&app, "POST", &format!("{base}/repair"), r#"{"H": -1}"#).await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);
    let r = call(&app, "POST", &format!("{base}/heatmap"), r#"{"grid": "/etc/passwd"}"#).await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);

    // session creation
    let trace = common::example_trace().to_jsonl();
    for req in [
        json!({"rsm": "attacker_simple", "params": common::example_params()}),
        json!({"rsm": "attacker_simple", "params": common::example_params(), "trace": trace,
               "scenario": Scenario::new(Task::Goal, Default::default())}),
        json!({"rsm": "attacker", "params": common::example_params(), "trace": trace}),
        json!({"rsm": "docker", "params": fixtures::docker_nominal(), "trace": trace}),
        json!({"rsm": "states {", "params": {}, "trace": trace}),
    ] {
        let r = call(&app, "POST", "/api/v1/sessions", req.to_string()).await;
        assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY, "{req}: {}", r.body);
    }
}

#[tokio::test]
async fn unknown_resources_are_404() {
    let app = router(App::new(1));
    assert_eq!(get(&app, "/api/v1/sessions/nope").await.status, StatusCode::NOT_FOUND);
    assert_eq!(call(&app, "POST", "/api/v1/sessions/nope/corrections", "{}").await.status, StatusCode::NOT_FOUND);
    let id = running_example(&app).await;
    let base = format!("/api/v1/sessions/{id}");
    for path in ["fork", "repair/0", "solutions", "heatmap", "params/1"] {
        assert_eq!(get(&app, &format!("{base}/{path}")).await.status, StatusCode::NOT_FOUND, "{path}");
    }
    assert_eq!(call(&app, "POST", &format!("{base}/fork/step"), "").await.status, StatusCode::NOT_FOUND);
    assert_eq!(call(&app, "POST", &format!("{base}/solutions/0/apply"), "").await.status, StatusCode::NOT_FOUND);
    assert_eq!(call(&app, "DELETE", &base, "").await.status, StatusCode::NO_CONTENT);
    assert_eq!(get(&app, &base).await.status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn trace_windows_and_export() {
    let app = router(App::new(1));
    let s = GridSpec::docker().scenarios()[5].1.clone();
    let ep = run_episode(&corpus::docker(), &fixtures::docker_baseline(), &s).unwrap();
    let trace = ep.trace;
    assert!(trace.len() > WINDOW);
    let id = create(&app, json!({"rsm": "docker", "params": fixtures::docker_baseline(), "trace": trace.to_jsonl()})).await;
    let base = format!("/api/v1/sessions/{id}");
    let w = get(&app, &format!("{base}/trace")).await.json();
    assert_eq!((w["t0"].as_u64(), w["t1"].as_u64()), (Some(0), Some(WINDOW as u64)));
    assert_eq!(w["len"].as_u64(), Some(trace.len() as u64));
    assert_eq!(w["elements"].as_array().unwrap().len(), WINDOW);
    let world: Vec<Projection> = serde_json::from_value(w["world"].clone()).unwrap();
    assert_eq!(world[7].t, 7);
    // the docker records only dock-relative channels, and no ball
    assert!(world.iter().all(|p| p.ball.is_none() && p.robot.is_some() && p.heading.is_some()));
    let r0 = world[0].robot.unwrap();
    assert!((r0[0] - s.world.robot.x).abs() < 1e-9 && (r0[1] - s.world.robot.y).abs() < 1e-9, "{r0:?}");

    let tail = get(&app, &format!("{base}/trace?t0={}", trace.len() - 3)).await.json();
    assert_eq!(tail["elements"].as_array().unwrap().len(), 3);
    let r = get(&app, &format!("{base}/trace?t0=5&t1=2")).await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);

    let r = get(&app, &format!("{base}/trace/export")).await;
    let back = Trace::read_from(r.body.as_bytes()).unwrap();
    assert!(back.elements().iter().zip(trace.elements()).all(|(a, b)| a.bit_eq(b)));
    assert_eq!(back.len(), trace.len());
}

#[tokio::test]
async fn continue_fork_matches_the_command_line() {
    let app = router(App::new(1));
    let (trace, k) = premature();
    let p = fixtures::attacker_premature();
    let t = corpus::attacker();
    let cli = rsm_cli::continue_fork(&t, &p, &trace, k, "KICK", KICK_READY, 1800, None).unwrap();
    let stop_t = cli.last().unwrap().t;

    let id = create(&app, json!({"rsm": "attacker", "params": p, "trace": trace.to_jsonl()})).await;
    let base = format!("/api/v1/sessions/{id}");
    let start = json!({"t": k, "forbidden": "KICK"}).to_string();
    let r = call(&app, "POST", &format!("{base}/fork"), start.clone()).await;
    assert_eq!(r.status, StatusCode::CREATED, "{}", r.body);
    assert_eq!(r.json()["base_t"].as_u64(), Some(k as u64));
    assert_eq!(call(&app, "POST", &format!("{base}/fork"), start.clone()).await.status, StatusCode::CONFLICT);

    // one step, then the rest in one request
    let one = call(&app, "POST", &format!("{base}/fork/step"), "").await.json();
    assert_eq!(one["steps"].as_u64(), Some(1));
    assert_eq!(one["elements"][0]["t"].as_u64(), Some(k as u64 + 1));
    let n = stop_t - k - 1;
    let rest = call(&app, "POST", &format!("{base}/fork/step"), json!({ "n": n }).to_string()).await.json();
    assert_eq!(rest["terminated"], false);
    assert_eq!(rest["negatives"].as_u64(), Some((stop_t - k) as u64));
    assert_eq!(rest["world"].as_array().unwrap().len(), n);
    assert!(rest["world"].as_array().unwrap().iter().all(|w| w["state"] != "KICK"));

    let r = call(&app, "POST", &format!("{base}/fork/finalize"), json!({ "stop_t": stop_t + 1 }).to_string()).await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);
    let r = call(&app, "POST", &format!("{base}/fork/finalize"), json!({ "stop_t": stop_t }).to_string()).await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(r.body, corrections::to_json(&cli));
    assert_eq!(get(&app, &format!("{base}/corrections")).await.body, r.body);
    assert_eq!(cli.len(), stop_t - k + 1);

    assert_eq!(call(&app, "POST", &format!("{base}/fork/step"), "").await.status, StatusCode::CONFLICT);
    let again = json!({ "stop_t": stop_t }).to_string();
    assert_eq!(call(&app, "POST", &format!("{base}/fork/finalize"), again).await.status, StatusCode::CONFLICT);
    assert_eq!(get(&app, &format!("{base}/fork")).await.json()["status"], "finalized");

    // a second fork appends its trace as a new segment
    let before = get(&app, &base).await.json()["len"].as_u64().unwrap() as usize;
    let r = call(&app, "POST", &format!("{base}/fork"), json!({"t": k, "forbidden": "KICK"}).to_string()).await;
    assert_eq!(r.status, StatusCode::CREATED);
    let r = call(&app, "POST", &format!("{base}/fork/finalize"), json!({ "stop_t": k }).to_string()).await;
    let second: Vec<Correction> = serde_json::from_str(&r.body).unwrap();
    assert_eq!(second.len(), 1);
    let all: Vec<Correction> = serde_json::from_str(&get(&app, &format!("{base}/corrections")).await.body).unwrap();
    assert_eq!(all.len(), cli.len() + 1);
    assert_eq!(all.last().unwrap().t, before + k);
    assert_eq!(get(&app, &base).await.json()["len"].as_u64(), Some((before + k + 1) as u64));

    // and the whole lot repairs
    let j = repair(&app, &id, "").await;
    assert_eq!(j["status"], "done", "{j}");
}

#[tokio::test]
async fn fork_errors() {
    let app = router(App::new(1));
    let p = fixtures::docker_nominal();
    let id = create(
        &app,
        json!({"rsm": "docker", "params": p, "scenario": Scenario::new(Task::Dock, Default::default())}),
    )
    .await;
    let base = format!("/api/v1/sessions/{id}");
    let len = get(&app, &base).await.json()["len"].as_u64().unwrap();
    let at_end = json!({"t": len - 1, "forbidden": "S1_FORWARD"}).to_string();
    let r = call(&app, "POST", &format!("{base}/fork"), at_end).await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(r.body.contains("end state"), "{}", r.body);
    let r = call(&app, "POST", &format!("{base}/fork"), json!({"t": 0, "forbidden": "NOPE"}).to_string()).await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);

    // the simplified attacker does not record enough to fork
    let id = running_example(&app).await;
    let r = call(&app, "POST", &format!("/api/v1/sessions/{id}/fork"), json!({"t": 2, "forbidden": "KICK"}).to_string())
        .await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn stepping_past_the_episode_closes_the_fork() {
    let app = router(App::new(1));
    let (trace, k) = premature();
    let id = create(&app, json!({"rsm": "attacker", "params": fixtures::attacker_premature(), "trace": trace.to_jsonl()}))
        .await;
    let base = format!("/api/v1/sessions/{id}");
    call(&app, "POST", &format!("{base}/fork"), json!({"t": k, "forbidden": "KICK"}).to_string()).await;
    let r = call(&app, "POST", &format!("{base}/fork/step"), r#"{"n": 100000}"#).await.json();
    assert_eq!(r["terminated"], true);
    assert_eq!(r["status"], "closed");
    assert_eq!(call(&app, "POST", &format!("{base}/fork/step"), "").await.status, StatusCode::CONFLICT);
    // a closed fork can be discarded or replaced
    assert_eq!(call(&app, "DELETE", &format!("{base}/fork"), "").await.status, StatusCode::NO_CONTENT);
    let r = call(&app, "POST", &format!("{base}/fork"), json!({"t": k, "forbidden": "KICK"}).to_string()).await;
    assert_eq!(r.status, StatusCode::CREATED);
}

#[tokio::test]
async fn failed_repairs_are_reported_by_the_job() {
    let app = router(App::new(1));
    let id = running_example(&app).await;
    call(&app, "POST", &format!("/api/v1/sessions/{id}/corrections"), serde_json::to_string(&common::c5()).unwrap())
        .await;
    let j = repair(&app, &id, r#"{"backend": "smt:/nonexistent/solver"}"#).await;
    assert_eq!(j["status"], "failed");
    assert!(j["error"].as_str().unwrap().contains("nonexistent"), "{j}");
    assert_eq!(get(&app, &format!("/api/v1/sessions/{id}/solutions")).await.status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn heatmaps_match_the_command_line() {
    let app = router(App::new(1));
    let id = create(
        &app,
        json!({"rsm": "docker", "params": fixtures::docker_nominal(), "scenario": GridSpec::docker().scenarios()[3].1}),
    )
    .await;
    let base = format!("/api/v1/sessions/{id}");
    let r = call(&app, "POST", &format!("{base}/heatmap"), r#"{"grid": "docker"}"#).await;
    assert_eq!(r.status, StatusCode::OK);
    let cli = rsm_cli::evaluate(&corpus::docker(), &fixtures::docker_nominal(), &GridSpec::docker()).unwrap();
    assert_eq!(r.body, cli.to_csv());
    assert_eq!(get(&app, &format!("{base}/heatmap")).await.body, r.body);

    let g = GridSpec { angles: 1, ..GridSpec::docker() };
    let r = call(&app, "POST", &format!("{base}/heatmap"), json!({"grid": g, "seed": 9}).to_string()).await;
    assert_eq!(r.status, StatusCode::OK);
    let cli = rsm_cli::evaluate(&corpus::docker(), &fixtures::docker_nominal(), &GridSpec { seed: 9, ..g }).unwrap();
    assert_eq!(r.body, cli.to_csv());
}

/// Random operations on many sessions at once; each session ends up with
/// exactly its own corrections and parameters.
#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn sessions_are_isolated() {
    let app = router(App::new(2));
    let mut ids = Vec::new();
    for _ in 0..8 {
        ids.push(running_example(&app).await);
    }
    let tasks: Vec<_> = ids
        .iter()
        .enumerate()
        .map(|(i, id)| {
            let (app, id) = (app.clone(), id.clone());
            tokio::spawn(async move {
                let mut rng = ChaCha8Rng::seed_from_u64(i as u64);
                let mut mine = Vec::new();
                for _ in 0..rng.random_range(3..12) {
                    let c = Correction {
                        kind: if rng.random_bool(0.7) { CorrectionKind::Immediate } else { CorrectionKind::Negative },
                        t: rng.random_range(0..6),
                        state: Label::new(["GOTO", "KICK", "END"][rng.random_range(0..3)]),
                        params: None,
                    };
                    let r = call(&app, "POST", &format!("/api/v1/sessions/{id}/corrections"), serde_json::to_string(&c).unwrap())
                        .await;
                    assert_eq!(r.status, StatusCode::CREATED);
                    mine.push(c);
                    if rng.random_bool(0.3) {
                        tokio::task::yield_now().await;
                    }
                }
                let j = repair(&app, &id, "").await;
                assert_eq!(j["status"], "done", "{j}");
                mine
            })
        })
        .collect();
    for (id, task) in ids.iter().zip(tasks) {
        let mine = task.await.unwrap();
        let base = format!("/api/v1/sessions/{id}");
        assert_eq!(get(&app, &format!("{base}/corrections")).await.body, corrections::to_json(&mine));
        let sols = get(&app, &format!("{base}/solutions")).await.body;
        let cli = rsm_cli::repair(
            &common::attacker(),
            &common::example_params(),
            &common::example_trace(),
            &mine,
            &RepairConfig::default(),
        )
        .unwrap();
        assert_eq!(sols, cli.to_json());
        assert_eq!(get(&app, &base).await.json()["version"].as_u64(), Some(0));
    }
}

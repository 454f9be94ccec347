use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::routing::post;
use axum::{Json, Router};
use serde_json::{json, Value};

use reviewlens_core::gateway::{Gateway, GatewayConfig, GatewayError, RemoteBackend, RemoteConfig};

#[derive(Default)]
struct Fake {
    calls: AtomicUsize,
    fail_first: usize,
    status: Option<u16>,
    auth: Mutex<Vec<Option<String>>>,
    bodies: Mutex<Vec<Value>>,
}

impl Fake {
    fn record(&self, headers: &HeaderMap, body: Value) -> Option<StatusCode> {
        let n = self.calls.fetch_add(1, Ordering::SeqCst);
        self.auth.lock().unwrap().push(
            headers
                .get("authorization")
                .map(|v| v.to_str().unwrap().to_string()),
        );
        self.bodies.lock().unwrap().push(body);
        if n < self.fail_first {
            return Some(StatusCode::from_u16(self.status.unwrap_or(503)).unwrap());
        }
        None
    }
}

async fn chat(
    State(f): State<Arc<Fake>>,
    headers: HeaderMap,
    Json(body): Json<Value>,
) -> Result<Json<Value>, StatusCode> {
    if let Some(code) = f.record(&headers, body.clone()) {
        return Err(code);
    }
    let prompt = body["messages"][0]["content"].as_str().unwrap_or_default();
    Ok(Json(
        json!({"choices": [{"message": {"role": "assistant", "content": format!("echo: {prompt}")}}]}),
    ))
}

async fn embeddings(
    State(f): State<Arc<Fake>>,
    headers: HeaderMap,
    Json(body): Json<Value>,
) -> Result<Json<Value>, StatusCode> {
    if let Some(code) = f.record(&headers, body.clone()) {
        return Err(code);
    }
    let inputs: Vec<String> = serde_json::from_value(body["input"].clone()).unwrap();
    // answered out of order; the client must reorder by index
    let data: Vec<Value> = inputs
        .iter()
        .enumerate()
        .rev()
        .map(|(i, t)| json!({"index": i, "embedding": [t.len() as f64, i as f64, 1.0]}))
        .collect();
    Ok(Json(json!({ "data": data })))
}

fn serve(fake: Arc<Fake>) -> String {
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_current_thread()
            .enable_all()
            .build()
            .unwrap();
        rt.block_on(async move {
            let app = Router::new()
                .route("/v1/chat/completions", post(chat))
                .route("/v1/embeddings", post(embeddings))
                .with_state(fake);
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            axum::serve(listener, app).await.unwrap();
        });
    });
    format!("http://{}/v1", rx.recv().unwrap())
}

fn gateway(endpoint: String, auth_env: &str, max_retries: u32) -> Gateway {
    let backend = RemoteBackend::new(RemoteConfig {
        endpoint,
        auth_env: auth_env.into(),
        timeout_secs: 5,
        ..RemoteConfig::default()
    })
    .unwrap();
    Gateway::new(
        Arc::new(backend),
        GatewayConfig {
            max_retries,
            base_delay: Duration::from_millis(1),
            embed_batch: 2,
            ..GatewayConfig::default()
        },
    )
}

#[test]
fn chat_request_carries_token_and_retries_transient_failures() {
    let fake = Arc::new(Fake {
        fail_first: 2,
        ..Fake::default()
    });
    std::env::set_var("REVIEWLENS_TEST_TOKEN_A", "tok-a");
    let gw = gateway(serve(fake.clone()), "REVIEWLENS_TEST_TOKEN_A", 3);

    let out = gw.generate(&gw.request("hello")).unwrap();
    assert_eq!(out, "echo: hello");
    assert_eq!(fake.calls.load(Ordering::SeqCst), 3);
    assert!(fake
        .auth
        .lock()
        .unwrap()
        .iter()
        .all(|a| a.as_deref() == Some("Bearer tok-a")));
    let body = &fake.bodies.lock().unwrap()[2];
    assert_eq!(body["messages"][0]["role"], "user");
    assert_eq!(body["temperature"], 0.0);
    assert_eq!(body["seed"], 0);
}

#[test]
fn retries_are_bounded() {
    let fake = Arc::new(Fake {
        fail_first: usize::MAX,
        status: Some(429),
        ..Fake::default()
    });
    let gw = gateway(serve(fake.clone()), "REVIEWLENS_TEST_TOKEN_UNSET", 2);
    match gw.generate(&gw.request("hello")) {
        Err(GatewayError::Backend { attempts, .. }) => assert_eq!(attempts, 3),
        other => panic!("expected backend error, got {other:?}"),
    }
    assert_eq!(fake.calls.load(Ordering::SeqCst), 3);
    assert!(fake.auth.lock().unwrap().iter().all(Option::is_none));
}

#[test]
fn client_errors_are_not_retried() {
    let fake = Arc::new(Fake {
        fail_first: usize::MAX,
        status: Some(401),
        ..Fake::default()
    });
    let gw = gateway(serve(fake.clone()), "REVIEWLENS_TEST_TOKEN_UNSET", 3);
    assert!(gw.generate(&gw.request("hello")).is_err());
    assert_eq!(fake.calls.load(Ordering::SeqCst), 1);
}

#[test]
fn embeddings_come_back_in_input_order() {
    let fake = Arc::new(Fake::default());
    let gw = gateway(serve(fake.clone()), "REVIEWLENS_TEST_TOKEN_UNSET", 0);
    let texts: Vec<String> = ["a", "bb", "ccc", "dddd", "eeeee"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let vectors = gw.embed(&texts).unwrap();
    let lens: Vec<f64> = vectors.iter().map(|v| v.values()[0]).collect();
    assert_eq!(lens, [1.0, 2.0, 3.0, 4.0, 5.0]);
    // embed_batch = 2 splits five texts into three calls
    assert_eq!(fake.calls.load(Ordering::SeqCst), 3);
}

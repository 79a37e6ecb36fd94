//! The HTTP transport against a local fault-injecting endpoint.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde_json::{json, Value};
use subsbench::llmclient::{
    ClientConfig, ClientError, EmbeddingClient, EndpointMode, GenerationParams, LlmClient,
};

type Handler = dyn Fn(&str, &Value, usize) -> (u16, String) + Send + Sync;

struct Server {
    base_url: String,
    requests: Arc<Mutex<Vec<(String, Value)>>>,
    peak: Arc<AtomicUsize>,
}

/// Serves one request per connection; `handler` gets the path, the JSON
/// body and the zero-based request number.
fn serve(handler: Box<Handler>) -> Server {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let requests = Arc::new(Mutex::new(Vec::new()));
    let peak = Arc::new(AtomicUsize::new(0));
    let in_flight = Arc::new(AtomicUsize::new(0));
    let handler: Arc<Handler> = Arc::from(handler);
    {
        let requests = requests.clone();
        let peak = peak.clone();
        std::thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { continue };
                let requests = requests.clone();
                let handler = handler.clone();
                let peak = peak.clone();
                let in_flight = in_flight.clone();
                std::thread::spawn(move || {
                    let now = in_flight.fetch_add(1, Ordering::SeqCst) + 1;
                    peak.fetch_max(now, Ordering::SeqCst);
                    let mut reader = BufReader::new(stream.try_clone().unwrap());
                    let mut request_line = String::new();
                    reader.read_line(&mut request_line).unwrap();
                    let path = request_line.split_whitespace().nth(1).unwrap_or("").to_string();
                    let mut length = 0usize;
                    loop {
                        let mut line = String::new();
                        reader.read_line(&mut line).unwrap();
                        if line.trim().is_empty() {
                            break;
                        }
                        if let Some((k, v)) = line.split_once(':') {
                            if k.eq_ignore_ascii_case("content-length") {
                                length = v.trim().parse().unwrap();
                            }
                        }
                    }
                    let mut body = vec![0; length];
                    reader.read_exact(&mut body).unwrap();
                    let body: Value = serde_json::from_slice(&body).unwrap_or(Value::Null);
                    let n = {
                        let mut r = requests.lock().unwrap();
                        r.push((path.clone(), body.clone()));
                        r.len() - 1
                    };
                    let (status, text) = handler(&path, &body, n);
                    std::thread::sleep(Duration::from_millis(20));
                    in_flight.fetch_sub(1, Ordering::SeqCst);
                    let response = format!(
                        "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{text}",
                        text.len()
                    );
                    let _ = stream.write_all(response.as_bytes());
                });
            }
        });
    }
    Server {
        base_url: format!("http://{addr}/v1"),
        requests,
        peak,
    }
}

fn chat_reply(text: &str) -> String {
    json!({"choices": [{"index": 0, "message": {"role": "assistant", "content": text}}]}).to_string()
}

fn prompt_of(body: &Value) -> String {
    body["messages"][0]["content"].as_str().unwrap_or_default().to_string()
}

fn config(base_url: &str) -> ClientConfig {
    ClientConfig {
        base_url: base_url.into(),
        api_key_env: None,
        backoff_base_ms: 1,
        backoff_max_ms: 5,
        timeout_secs: 10,
        ..ClientConfig::default()
    }
}

#[test]
fn retries_server_errors_then_succeeds() {
    let server = serve(Box::new(|_, _, n| {
        if n < 2 {
            (500, "{}".into())
        } else {
            (200, chat_reply("1. lime"))
        }
    }));
    let client = LlmClient::http(config(&server.base_url)).unwrap();
    let c = client.complete("q", &GenerationParams::default()).unwrap();
    assert_eq!(c.text, "1. lime");
    assert_eq!(c.attempt_count, 3);
    let reqs = server.requests.lock().unwrap();
    assert_eq!(reqs.len(), 3);
    assert!(reqs.iter().all(|(p, _)| p == "/v1/chat/completions"));
}

#[test]
fn request_body_carries_decoding_params() {
    let server = serve(Box::new(|_, _, _| (200, chat_reply("x"))));
    let client = LlmClient::http(config(&server.base_url)).unwrap();
    let params = GenerationParams {
        temperature: 0.1,
        repetition_penalty: 1.15,
        max_new_tokens: 20,
    };
    client.complete("hello", &params).unwrap();
    let (_, body) = server.requests.lock().unwrap()[0].clone();
    assert_eq!(body["model"], "mistral-7b");
    assert_eq!(body["temperature"], 0.1);
    assert_eq!(body["repetition_penalty"], 1.15);
    assert_eq!(body["max_tokens"], 20);
    assert_eq!(prompt_of(&body), "hello");
}

#[test]
fn completions_endpoint_mode() {
    let server = serve(Box::new(|_, body, _| {
        (200, json!({"choices": [{"text": format!("echo {}", body["prompt"].as_str().unwrap())}]}).to_string())
    }));
    let client = LlmClient::http(ClientConfig {
        endpoint: EndpointMode::Completions,
        send_repetition_penalty: false,
        ..config(&server.base_url)
    })
    .unwrap();
    assert_eq!(client.complete("p", &GenerationParams::default()).unwrap().text, "echo p");
    let (path, body) = server.requests.lock().unwrap()[0].clone();
    assert_eq!(path, "/v1/completions");
    assert!(body.get("repetition_penalty").is_none());
}

#[test]
fn poisoned_prompt_leaves_batch_intact() {
    let server = serve(Box::new(|_, body, _| {
        let p = prompt_of(body);
        if p == "p4" {
            (400, "{\"error\":\"bad prompt\"}".into())
        } else {
            (200, chat_reply(&format!("1. {p}")))
        }
    }));
    let client = LlmClient::http(config(&server.base_url)).unwrap();
    let prompts: Vec<String> = (0..10).map(|i| format!("p{i}")).collect();
    let outcome = client.complete_batch(&prompts, &GenerationParams::default());
    assert_eq!(outcome.failed_indices(), vec![4]);
    assert!(matches!(&outcome.results[4], Err(ClientError::Request { status: 400, .. })));
    for (i, r) in outcome.results.iter().enumerate() {
        if i != 4 {
            assert_eq!(r.as_ref().unwrap().text, format!("1. p{i}"));
        }
    }
    assert_eq!(outcome.error_report().unwrap().indices(), vec![4]);
}

#[test]
fn parallelism_bound_holds() {
    let server = serve(Box::new(|_, _, _| (200, chat_reply("ok"))));
    let client = LlmClient::http(ClientConfig {
        parallelism: 3,
        ..config(&server.base_url)
    })
    .unwrap();
    let prompts: Vec<String> = (0..24).map(|i| format!("p{i}")).collect();
    let outcome = client.complete_batch(&prompts, &GenerationParams::default());
    assert!(outcome.failed_indices().is_empty());
    let peak = server.peak.load(Ordering::SeqCst);
    assert!(peak <= 3, "peak concurrency {peak}");
}

#[test]
fn cache_replay_makes_no_requests() {
    let dir = tempfile::tempdir().unwrap();
    let server = serve(Box::new(|_, body, _| (200, chat_reply(&prompt_of(body)))));
    let cfg = ClientConfig {
        cache_dir: Some(dir.path().to_path_buf()),
        ..config(&server.base_url)
    };
    let prompts: Vec<String> = (0..5).map(|i| format!("p{i}")).collect();
    let first = LlmClient::http(cfg.clone()).unwrap().complete_batch(&prompts, &GenerationParams::default());
    assert_eq!(server.requests.lock().unwrap().len(), 5);

    let offline = LlmClient::http(ClientConfig {
        base_url: "http://127.0.0.1:9/v1".into(),
        ..cfg
    })
    .unwrap();
    let second = offline.complete_batch(&prompts, &GenerationParams::default());
    for (a, b) in first.results.iter().zip(&second.results) {
        let (a, b) = (a.as_ref().unwrap(), b.as_ref().unwrap());
        assert_eq!(a.text, b.text);
        assert!(b.cached);
    }
    assert_eq!(server.requests.lock().unwrap().len(), 5);
}

#[test]
fn unauthorized_is_not_retried() {
    let server = serve(Box::new(|_, _, _| (401, "{}".into())));
    let client = LlmClient::http(config(&server.base_url)).unwrap();
    assert!(matches!(
        client.complete("q", &GenerationParams::default()),
        Err(ClientError::Request { status: 401, .. })
    ));
    assert_eq!(server.requests.lock().unwrap().len(), 1);
}

#[test]
fn malformed_body_is_protocol_error() {
    let server = serve(Box::new(|_, _, _| (200, "{\"choices\": []}".into())));
    let client = LlmClient::http(config(&server.base_url)).unwrap();
    assert!(matches!(client.complete("q", &GenerationParams::default()), Err(ClientError::Protocol(_))));
}

#[test]
fn exhausted_retries_report_attempts() {
    let server = serve(Box::new(|_, _, _| (503, "{}".into())));
    let client = LlmClient::http(ClientConfig {
        max_retries: 2,
        ..config(&server.base_url)
    })
    .unwrap();
    match client.complete("q", &GenerationParams::default()) {
        Err(ClientError::Transport { attempts, .. }) => assert_eq!(attempts, 3),
        other => panic!("expected transport error, got {other:?}"),
    }
}

#[test]
fn embeddings_endpoint() {
    let server = serve(Box::new(|path, body, _| {
        assert_eq!(path, "/v1/embeddings");
        let n = body["input"].as_array().unwrap().len();
        let data: Vec<Value> = (0..n).rev().map(|i| json!({"index": i, "embedding": [i as f64, 1.0]})).collect();
        (200, json!({"data": data}).to_string())
    }));
    let client = EmbeddingClient::new(&server.base_url, "multi-qa-mpnet-base-cos-v1", &config(&server.base_url)).unwrap();
    let out = client.embed(&["a".into(), "b".into(), "c".into()]).unwrap();
    assert_eq!(out, vec![vec![0.0, 1.0], vec![1.0, 1.0], vec![2.0, 1.0]]);
    assert_eq!(server.requests.lock().unwrap()[0].1["model"], "multi-qa-mpnet-base-cos-v1");
}

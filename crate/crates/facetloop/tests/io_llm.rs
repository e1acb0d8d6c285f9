use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::mpsc;
use std::thread;
use std::time::Duration;

use facetloop::core::catalog::{generate_catalog, CatalogConfig};
use facetloop::core::facetgen::FacetSelection;
use facetloop::core::context::RewriteContext;
use facetloop::core::lexindex::build_index;
use facetloop::core::pipeline::{FacetStrategy, Pipeline, RefineStrategy};
use facetloop::core::reward::CtrModel;
use facetloop::core::rng;
use facetloop::core::trainer::{PolicyParams, SimEnv};
use facetloop::core::usersim::{generate_trends, run_session, SimConfig};
use facetloop::core::reward::RewardConfig;
use facetloop::core::SearchEnv;
use facetloop::io::{
    decode_index, encode_index, logs_from_events, read_checkpoint, read_jsonl, session_events, write_checkpoint, write_jsonl,
    Checkpoint,
};
use facetloop::llm::{llm_generate_facets, llm_rewrite, LlmClient, LlmError};

/// Answers one chat-completion request with `content` and hands back the
/// request body.
fn mock(content: &str) -> (String, mpsc::Receiver<String>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let body = serde_json::json!({ "choices": [{ "message": { "role": "assistant", "content": content } }] }).to_string();
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        let (stream, _) = listener.accept().unwrap();
        let mut reader = BufReader::new(stream.try_clone().unwrap());
        let mut len = 0usize;
        loop {
            let mut line = String::new();
            reader.read_line(&mut line).unwrap();
            if line == "\r\n" || line.is_empty() {
                break;
            }
            if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                len = v.trim().parse().unwrap();
            }
        }
        let mut req = vec![0u8; len];
        reader.read_exact(&mut req).unwrap();
        let _ = tx.send(String::from_utf8_lossy(&req).into_owned());
        let mut s = stream;
        write!(s, "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}", body.len(), body)
            .unwrap();
    });
    (format!("http://{addr}/v1/chat/completions"), rx)
}

fn client(endpoint: String) -> LlmClient {
    LlmClient { endpoint, model: "test-model".into(), api_key: Some("k".into()), timeout: Duration::from_secs(5) }
}

fn kg() -> facetloop::core::catalog::KnowledgeGraph {
    generate_catalog(&CatalogConfig { seed: 1, num_products: 200, ..Default::default() }).1
}

fn known_attrs(kg: &facetloop::core::catalog::KnowledgeGraph) -> Vec<String> {
    kg.categories.values().flat_map(|a| a.keys().cloned()).collect::<std::collections::BTreeSet<_>>().into_iter().collect()
}

#[test]
fn llm_facets_are_grounded() {
    let kg = kg();
    let attrs = known_attrs(&kg);
    let payload = serde_json::json!([{ "name": attrs[0] }, { "name": attrs[1] }, { "name": attrs[2] }]).to_string();
    let (url, rx) = mock(&payload);
    let (list, dropped) = llm_generate_facets(&client(url), "facets for: dress", &kg).unwrap();
    assert_eq!(list.names(), attrs[..3].iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(dropped, 0);
    let sent: serde_json::Value = serde_json::from_str(&rx.recv().unwrap()).unwrap();
    assert_eq!(sent["model"], "test-model");
    assert!(sent["messages"][0]["content"].as_str().unwrap().contains("dress"));

    let payload = format!("```json\n{{\"facets\": [{{\"name\": \"{}\"}}, {{\"name\": \"sparkle_index\"}}, {{\"name\": \"vibe\"}}]}}\n```", attrs[0]);
    let (url, _) = mock(&payload);
    let (list, dropped) = llm_generate_facets(&client(url), "p", &kg).unwrap();
    assert_eq!(list.len(), 1);
    assert_eq!(dropped, 2);

    let (url, _) = mock("I cannot help with that.");
    assert!(matches!(llm_generate_facets(&client(url), "p", &kg), Err(LlmError::Parse { .. })));
}

#[test]
fn llm_transport_failure_is_reported() {
    let port = {
        let l = TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap().port()
    };
    let c = LlmClient { timeout: Duration::from_millis(500), ..client(format!("http://127.0.0.1:{port}/v1")) };
    assert!(matches!(llm_generate_facets(&c, "p", &kg()), Err(LlmError::Transport(_))));
}

#[test]
fn llm_rewrite_is_trimmed() {
    let (url, _) = mock("  red linen dress \n");
    let rw = RewriteContext { original_query: "linen dress".into(), selection: FacetSelection::new("color", "red"), click_history: vec![] };
    let q = llm_rewrite(&client(url), &rw).unwrap();
    assert!(q.contains("red"));
    assert_eq!(q, q.trim());
}

#[test]
fn checkpoint_roundtrip_and_rejection() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.json");
    let p = PolicyParams::default().with_flat(&(0..11).map(|i| i as f64 * 0.37 - 1.1).collect::<Vec<_>>()).unwrap();
    let ck = Checkpoint::new(p.clone(), Some(CtrModel { weights: vec![0.1; 6] }), 42);
    write_checkpoint(&path, &ck).unwrap();
    let back = read_checkpoint(&path).unwrap();
    assert_eq!(back, ck);
    let bits = |p: &PolicyParams| p.to_flat().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&back.params), bits(&p));

    let text = std::fs::read_to_string(&path).unwrap();
    std::fs::write(&path, text.replace("facetloop-params", "something-else")).unwrap();
    assert!(read_checkpoint(&path).is_err());
    std::fs::write(&path, "{ not json").unwrap();
    assert!(read_checkpoint(&path).is_err());
}

#[test]
fn index_bytes_roundtrip() {
    let (c, _) = generate_catalog(&CatalogConfig { seed: 2, num_products: 300, ..Default::default() });
    let idx = build_index(&c);
    let bytes = encode_index(&idx);
    assert_eq!(decode_index(&bytes).unwrap(), idx);
    assert_eq!(encode_index(&decode_index(&bytes).unwrap()), bytes);
    assert!(decode_index(&bytes[..bytes.len() - 1]).is_err());
}

#[test]
fn session_events_roundtrip() {
    let (c, kg) = generate_catalog(&CatalogConfig { seed: 3, num_products: 800, ..Default::default() });
    let trends = generate_trends(&kg, 3);
    let env = SearchEnv::new(c, kg);
    let (sim, reward) = (SimConfig::default(), RewardConfig::default());
    let senv = SimEnv { env: &env, trends: Some(&trends), sim: &sim, reward: &reward };
    let pipeline = Pipeline::new(&env, FacetStrategy::Gini, RefineStrategy::Boolean);
    let logs: Vec<_> = (0..15)
        .map(|i| {
            let mut r = rng::stream(3, &[i]);
            let (intent, ctx) = senv.session(&mut r).unwrap();
            run_session(&pipeline, &intent, &ctx, &sim, &mut r).unwrap()
        })
        .collect();
    let events = session_events("run", &logs).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("events.jsonl");
    write_jsonl(&path, &events).unwrap();
    let back = logs_from_events(&read_jsonl(&path).unwrap()).unwrap();
    assert_eq!(back, logs);
}

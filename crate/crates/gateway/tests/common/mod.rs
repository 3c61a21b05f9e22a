#![allow(dead_code)]

use std::net::SocketAddr;
use std::path::Path;

use anchorsim_gateway::config::RunConfig;
use anchorsim_gateway::service::{router, AppState};
use serde_json::{json, Value};

pub fn config_json(seed: u64, output_dir: Option<&Path>) -> Value {
    let mut v = json!({
        "schema_version": 1,
        "seed": seed,
        "scenario": {"fixture": "us_election_test"},
        "population": {"generate": {"pool_size": 24, "belief_topics": ["inflation_and_cost_of_living", "immigration"]}},
        "snapshot_stride": 5,
    });
    if let Some(d) = output_dir {
        v["output_dir"] = json!(d);
    }
    v
}

pub fn config(seed: u64, output_dir: Option<&Path>) -> RunConfig {
    RunConfig::from_json_value(config_json(seed, output_dir)).unwrap()
}

pub async fn spawn_server() -> SocketAddr {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move {
        axum::serve(listener, router(AppState::new(None))).await.unwrap();
    });
    addr
}

pub struct Client {
    pub base: String,
    pub http: reqwest::Client,
}

impl Client {
    pub fn new(addr: SocketAddr) -> Self {
        Client {
            base: format!("http://{addr}"),
            http: reqwest::Client::new(),
        }
    }

    pub async fn get(&self, path: &str) -> (u16, Value) {
        let r = self.http.get(format!("{}{path}", self.base)).send().await.unwrap();
        (r.status().as_u16(), r.json().await.unwrap())
    }

    pub async fn post(&self, path: &str, body: Value) -> (u16, Value) {
        let r = self.http.post(format!("{}{path}", self.base)).json(&body).send().await.unwrap();
        (r.status().as_u16(), r.json().await.unwrap())
    }

    pub async fn create(&self, cfg: Value) -> String {
        let (status, body) = self.post("/runs", cfg).await;
        assert_eq!(status, 201, "{body}");
        body["run_id"].as_str().unwrap().to_string()
    }

    /// Reads a server-sent event stream until its `end` event.
    pub async fn stream(&self, path: &str) -> Vec<(String, Value)> {
        use futures::StreamExt;
        let r = self.http.get(format!("{}{path}", self.base)).send().await.unwrap();
        assert_eq!(r.status().as_u16(), 200);
        let mut bytes = r.bytes_stream();
        let mut buf = String::new();
        let mut out = Vec::new();
        while let Some(chunk) = bytes.next().await {
            buf.push_str(&String::from_utf8_lossy(&chunk.unwrap()));
            while let Some(pos) = buf.find("\n\n") {
                let block: String = buf.drain(..pos + 2).collect();
                let mut event = String::new();
                let mut data = String::new();
                for line in block.lines() {
                    if let Some(e) = line.strip_prefix("event:") {
                        event = e.trim().to_string();
                    } else if let Some(d) = line.strip_prefix("data:") {
                        data.push_str(d.trim_start());
                    }
                }
                if event.is_empty() {
                    continue;
                }
                let done = event == "end";
                out.push((event, serde_json::from_str(&data).unwrap()));
                if done {
                    return out;
                }
            }
        }
        out
    }
}

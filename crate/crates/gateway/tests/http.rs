mod common;

use common::*;
use serde_json::json;

#[tokio::test(flavor = "multi_thread")]
async fn create_then_step_zero_has_one_metrics_row() {
    let c = Client::new(spawn_server().await);
    let id = c.create(config_json(1, None)).await;
    let (status, body) = c.post(&format!("/runs/{id}/step?n=0"), json!(null)).await;
    assert_eq!(status, 200, "{body}");
    assert_eq!(body["data"]["status"], "created");
    let (status, body) = c.get(&format!("/runs/{id}/metrics")).await;
    assert_eq!(status, 200);
    assert_eq!(body["run_id"], id.as_str());
    assert_eq!(body["tick"], 0);
    let rows = body["data"].as_array().unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0]["tick"], 0);
}

#[tokio::test(flavor = "multi_thread")]
async fn patch_while_paused_lands_on_next_tick() {
    let c = Client::new(spawn_server().await);
    let id = c.create(config_json(2, None)).await;
    let (_, body) = c.post(&format!("/runs/{id}/step?n=5"), json!(null)).await;
    assert_eq!(body["tick"], 5);
    let (_, body) = c.post(&format!("/runs/{id}/pause"), json!(null)).await;
    assert_eq!(body["data"]["status"], "paused");

    let (status, ack) = c
        .post(&format!("/runs/{id}/patch"), json!({"theta_bc": 0.3, "author": "tester"}))
        .await;
    assert_eq!(status, 200, "{ack}");
    assert_eq!(ack["tick"], 5);
    assert_eq!(ack["data"]["apply_at_tick"], 6);

    let (_, body) = c.post(&format!("/runs/{id}/step"), json!(null)).await;
    assert_eq!(body["tick"], 6);
    assert_eq!(body["data"]["theta_bc"], 0.3);
    let (_, events) = c.get(&format!("/runs/{id}/events?evidence=calibration_patch")).await;
    let recs = events["data"].as_array().unwrap();
    assert_eq!(recs.len(), 1);
    assert_eq!(recs[0]["tick"], 6);
    assert_eq!(recs[0]["payload"]["changes"]["theta_bc"]["to"], 0.3);
}

#[tokio::test(flavor = "multi_thread")]
async fn two_stream_clients_see_the_same_sequence() {
    let c = Client::new(spawn_server().await);
    let id = c.create(config_json(3, None)).await;
    c.post(&format!("/runs/{id}/step?n=2"), json!(null)).await;
    let path = format!("/runs/{id}/stream");
    let (a, b, _) = tokio::join!(c.stream(&path), c.stream(&path), async {
        tokio::time::sleep(std::time::Duration::from_millis(50)).await;
        c.post(&format!("/runs/{id}/resume"), json!(null)).await
    });
    assert_eq!(a, b);
    let ticks: Vec<u64> = a
        .iter()
        .filter(|(e, _)| e == "metrics")
        .map(|(_, d)| d["tick"].as_u64().unwrap())
        .collect();
    assert_eq!(ticks, (0..=15).collect::<Vec<u64>>());
    let (event, last) = a.last().unwrap();
    assert_eq!(event, "end");
    assert_eq!(last["data"]["status"], "finished");
    assert!(a.iter().all(|(_, d)| d["run_id"] == id.as_str()));

    // a late client gets the full history, then the end marker
    let late = c.stream(&format!("{path}?from=10")).await;
    assert_eq!(late.len(), 7);
    assert_eq!(late[0].1["tick"], 10);
}

#[tokio::test(flavor = "multi_thread")]
async fn errors_carry_run_id_and_tick() {
    let c = Client::new(spawn_server().await);
    let (status, body) = c.get("/runs/run-9999").await;
    assert_eq!(status, 404);
    assert_eq!(body["run_id"], "run-9999");
    assert_eq!(body["error"]["code"], "unknown_run");

    let mut bad = config_json(1, None);
    bad["schema_version"] = json!(7);
    let (status, body) = c.post("/runs", bad).await;
    assert_eq!(status, 422);
    assert_eq!(body["error"]["code"], "version_mismatch");

    let mut bad = config_json(1, None);
    bad["mystery"] = json!(true);
    let (status, body) = c.post("/runs", bad).await;
    assert_eq!(status, 422);
    assert_eq!(body["error"]["code"], "invalid_config");

    let id = c.create(config_json(1, None)).await;
    c.post(&format!("/runs/{id}/step?n=3"), json!(null)).await;
    for patch in [json!({"theta_bc": 3.0}), json!({"rho_scale": -1.0}), json!({}), json!({"theta": 0.5})] {
        let (status, body) = c.post(&format!("/runs/{id}/patch"), patch.clone()).await;
        assert_eq!(status, 422, "{patch}");
        assert_eq!(body["error"]["code"], "invalid_patch");
        assert_eq!(body["run_id"], id.as_str());
        assert_eq!(body["tick"], 3);
    }
    let (_, body) = c.get(&format!("/runs/{id}")).await;
    assert!(body["data"]["patches"].as_array().unwrap().is_empty());

    let (status, body) = c.get(&format!("/runs/{id}/histogram?tick=9")).await;
    assert_eq!(status, 404);
    assert_eq!(body["error"]["code"], "unknown_tick");
    let (status, _) = c.get(&format!("/runs/{id}/causal?level=planet")).await;
    assert_eq!(status, 422);
}

#[tokio::test(flavor = "multi_thread")]
async fn lifecycle_and_conflicts() {
    let c = Client::new(spawn_server().await);
    let id = c.create(config_json(4, None)).await;
    let (_, body) = c.get(&format!("/runs/{id}")).await;
    assert_eq!(body["data"]["status"], "created");
    assert_eq!(body["data"]["total_ticks"], 15);

    let (_, body) = c.post(&format!("/runs/{id}/patch"), json!({"paused": true})).await;
    assert_eq!(body["data"]["apply_at_tick"], 1);
    let (_, body) = c.get(&format!("/runs/{id}")).await;
    assert_eq!(body["data"]["status"], "paused");

    c.post(&format!("/runs/{id}/resume"), json!(null)).await;
    let mut status = String::new();
    for _ in 0..400 {
        let (code, body) = c.post(&format!("/runs/{id}/step"), json!(null)).await;
        status = c.get(&format!("/runs/{id}")).await.1["data"]["status"].as_str().unwrap().to_string();
        if status == "finished" {
            break;
        }
        assert_eq!(code, 409, "{body}");
        tokio::time::sleep(std::time::Duration::from_millis(10)).await;
    }
    assert_eq!(status, "finished");
    let (code, body) = c.post(&format!("/runs/{id}/step"), json!(null)).await;
    assert_eq!(code, 409);
    assert_eq!(body["tick"], 15);
    let (code, _) = c.post(&format!("/runs/{id}/patch"), json!({"theta_bc": 1.0})).await;
    assert_eq!(code, 422);
}

#[tokio::test(flavor = "multi_thread")]
async fn read_views() {
    let c = Client::new(spawn_server().await);
    let id = c.create(config_json(5, None)).await;
    c.post(&format!("/runs/{id}/step?n=4"), json!(null)).await;

    let (_, body) = c.get(&format!("/runs/{id}/metrics?from=2&limit=2")).await;
    let ticks: Vec<u64> = body["data"].as_array().unwrap().iter().map(|m| m["tick"].as_u64().unwrap()).collect();
    assert_eq!(ticks, [2, 3]);

    let (_, body) = c.get(&format!("/runs/{id}/histogram?tick=2")).await;
    assert_eq!(body["tick"], 4);
    assert_eq!(body["data"]["tick"], 2);
    let counts: u64 = body["data"]["counts"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap()).sum();
    assert_eq!(counts, 24);

    let (_, body) = c.get(&format!("/runs/{id}/network")).await;
    assert_eq!(body["data"]["nodes"].as_array().unwrap().len(), 24);
    assert!(!body["data"]["edges"].as_array().unwrap().is_empty());

    let (_, body) = c.get(&format!("/runs/{id}/causal?level=group")).await;
    assert_eq!(body["data"]["level"], "group");
    let nodes = body["data"]["nodes"].as_array().unwrap();
    assert!(nodes.iter().any(|n| n["id"] == "policy_engine"));
    assert!(nodes.iter().all(|n| n["kind"] != "agent"));

    let (_, body) = c.get("/runs").await;
    assert_eq!(body["data"].as_array().unwrap().len(), 1);
}

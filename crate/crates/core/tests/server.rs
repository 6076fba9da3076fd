use std::sync::Arc;

use futures::{SinkExt, StreamExt};
use tokio_tungstenite::tungstenite::Message;
use tryon::engine::{decode_frame_message, encode_frame_message, Catalog, Engine, EngineConfig, LoadedGarment, Service};
use tryon::gsnet::{ArchConfig, GsNet, Mode};
use tryon::imaging::Image;
use tryon::perception::Backends;
use tryon::server::{serve_listener, CatalogResponse, SelectResponse, StatsResponse};
use tryon::synthetic::capture_frame;

const BLUE: [f32; 3] = [0.1, 0.2, 0.9];
const RED: [f32; 3] = [0.9, 0.1, 0.1];

fn probe(id: &str, color: [f32; 3]) -> Arc<LoadedGarment> {
    let net = GsNet::constant(&ArchConfig::tiny(Mode::Hybrid), color, 1.0).unwrap();
    Arc::new(LoadedGarment::from_net(id, net, 32))
}

fn count_color(img: &Image, c: [f32; 3]) -> usize {
    let (h, w) = img.dims();
    (0..h * w)
        .filter(|i| (0..3).all(|k| (img.get(k, i / w, i % w) - c[k]).abs() < 2.0 / 255.0))
        .count()
}

async fn start() -> String {
    let catalog = Catalog::from_garments(vec![probe("blue", BLUE), probe("red", RED)]).unwrap();
    let engine = Engine::new(catalog, Backends::stub(7), EngineConfig::default()).unwrap();
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(serve_listener(Arc::new(Service::new(engine)), listener));
    format!("{addr}")
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn catalog_selection_and_stats() {
    let addr = start().await;
    let http = reqwest::Client::new();
    let cat: CatalogResponse = http.get(format!("http://{addr}/garments")).send().await.unwrap().json().await.unwrap();
    let ids: Vec<_> = cat.garments.iter().map(|g| g.garment_id.as_str()).collect();
    assert_eq!(ids, ["blue", "red"]);
    assert_eq!(cat.selected, "blue");

    let r = http
        .post(format!("http://{addr}/garments/select"))
        .json(&serde_json::json!({"garment_id": "green"}))
        .send()
        .await
        .unwrap();
    assert_eq!(r.status(), 404);
    let r = http
        .post(format!("http://{addr}/garments/select"))
        .json(&serde_json::json!({"garmentid": "red"}))
        .send()
        .await
        .unwrap();
    assert!(r.status().is_client_error());
    let cat: CatalogResponse = http.get(format!("http://{addr}/garments")).send().await.unwrap().json().await.unwrap();
    assert_eq!(cat.selected, "blue");

    // rapid double switch: last write wins
    for id in ["red", "blue"] {
        let r: SelectResponse = http
            .post(format!("http://{addr}/garments/select"))
            .json(&serde_json::json!({ "garment_id": id }))
            .send()
            .await
            .unwrap()
            .json()
            .await
            .unwrap();
        assert_eq!(r.garment_id, id);
    }
    let s: StatsResponse = http.get(format!("http://{addr}/stats")).send().await.unwrap().json().await.unwrap();
    assert_eq!(s.selected, "blue");
    assert_eq!(s.stats.frames, 0);

    let r = http.get(format!("http://{addr}/garments/blue/preview")).send().await.unwrap();
    assert_eq!(r.status(), 404);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn stream_round_trip_and_switch() {
    let addr = start().await;
    let http = reqwest::Client::new();
    let (mut ws, _) = tokio_tungstenite::connect_async(format!("ws://{addr}/stream")).await.unwrap();

    let mut results = Vec::new();
    for id in 0..20u64 {
        if id == 11 {
            let r: SelectResponse = http
                .post(format!("http://{addr}/garments/select"))
                .json(&serde_json::json!({"garment_id": "red"}))
                .send()
                .await
                .unwrap()
                .json()
                .await
                .unwrap();
            assert_eq!(r.effective_from_frame, 11);
        }
        let img = capture_frame(id as usize, 20, 2, 64, 56, 0.85).unwrap();
        ws.send(Message::Binary(encode_frame_message(id, &img).unwrap().into())).await.unwrap();
        // one in flight at a time, so nothing is dropped
        let msg = ws.next().await.unwrap().unwrap();
        let Message::Binary(bytes) = msg else { panic!("expected binary, got {msg:?}") };
        let frame = decode_frame_message(&bytes).unwrap();
        assert_eq!(frame.id, id);
        assert_eq!(frame.image.dims(), (64, 56));
        results.push(frame);
    }
    for f in &results {
        let (blue, red) = (count_color(&f.image, BLUE), count_color(&f.image, RED));
        if f.id <= 10 {
            assert!(blue > 50 && red == 0, "frame {}: blue {blue} red {red}", f.id);
        } else {
            assert!(red > 50 && blue == 0, "frame {}: blue {blue} red {red}", f.id);
        }
    }

    ws.send(Message::Binary(vec![1, 2, 3].into())).await.unwrap();
    let msg = ws.next().await.unwrap().unwrap();
    assert!(matches!(msg, Message::Text(_)), "{msg:?}");

    let s: StatsResponse = http.get(format!("http://{addr}/stats")).send().await.unwrap().json().await.unwrap();
    assert_eq!(s.stats.frames, 20);
    assert_eq!(s.selected, "red");
    assert!(s.stats.fps > 0.0);
    ws.close(None).await.unwrap();
}

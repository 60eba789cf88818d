use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use mslm::providers::{
    BridgeRequest, BridgeResponse, ClassRaster, HealthResponse, MockProvider, Provider, ProviderError, RemoteProvider,
};

/// Minimal echo-mode bridge: answers every endpoint with the mock's vectors.
struct EchoBridge {
    url: String,
    seen: Arc<Mutex<Vec<(String, BridgeRequest)>>>,
}

fn read_request(reader: &mut BufReader<TcpStream>) -> Option<(String, String, Vec<u8>)> {
    let mut line = String::new();
    if reader.read_line(&mut line).ok()? == 0 {
        return None;
    }
    let mut parts = line.split_whitespace();
    let method = parts.next()?.to_string();
    let path = parts.next()?.to_string();
    let mut len = 0usize;
    loop {
        let mut h = String::new();
        reader.read_line(&mut h).ok()?;
        let h = h.trim_end();
        if h.is_empty() {
            break;
        }
        if let Some((k, v)) = h.split_once(':') {
            if k.eq_ignore_ascii_case("content-length") {
                len = v.trim().parse().ok()?;
            }
        }
    }
    let mut body = vec![0u8; len];
    reader.read_exact(&mut body).ok()?;
    Some((method, path, body))
}

fn tensor(dims: Vec<u32>, rows: &[Vec<f64>]) -> BridgeResponse {
    let bytes: Vec<u8> = rows.iter().flatten().flat_map(|&x| (x as f32).to_le_bytes()).collect();
    BridgeResponse { dims: Some(dims), payload: Some(B64.encode(bytes)), text: None, model_id: "echo".into(), latency_ms: 0.1 }
}

fn respond(mock: &MockProvider, path: &str, body: &[u8], bad_dims: bool) -> (u16, String) {
    if path == "/health" {
        let h = HealthResponse { model_ids: vec!["echo".into()], dim: mock.dim() };
        return (200, serde_json::to_string(&h).unwrap());
    }
    let req: BridgeRequest = serde_json::from_slice(body).unwrap();
    let c = mock.dim() as u32;
    let resp = match path {
        "/embed/text" => {
            let labels: Vec<String> = req.payload.split('\n').map(String::from).collect();
            let rows = mock.embed_text(&labels).unwrap();
            tensor(vec![rows.len() as u32, if bad_dims { c + 1 } else { c }], &rows)
        }
        "/embed/audio" => {
            let raw = B64.decode(&req.payload).unwrap();
            let samples: Vec<f32> = raw.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
            let sr = req.params["sampleRate"].as_u64().unwrap() as u32;
            tensor(vec![c], &[mock.embed_audio(&samples, sr).unwrap()])
        }
        "/embed/pixels" | "/embed/global" => {
            let raster = ClassRaster {
                width: req.params["width"].as_u64().unwrap() as u32,
                height: req.params["height"].as_u64().unwrap() as u32,
                labels: B64.decode(&req.payload).unwrap(),
                vocabulary: serde_json::from_value(req.params["vocabulary"].clone()).unwrap(),
                frame_id: req.params["frameId"].as_u64().unwrap(),
                region: serde_json::from_value(req.params["region"].clone()).unwrap(),
            };
            if path == "/embed/global" {
                tensor(vec![c], &[mock.embed_global(&raster).unwrap()])
            } else {
                let img = mock.embed_pixels(&raster).unwrap();
                let rows: Vec<Vec<f64>> = img.data.chunks(img.dim).map(|r| r.iter().map(|&x| x as f64).collect()).collect();
                tensor(vec![raster.height, raster.width, c], &rows)
            }
        }
        "/codegen" => BridgeResponse {
            dims: None,
            payload: None,
            text: Some("robot.move_in_between('sink', 'oven')\n".into()),
            model_id: "echo-llm".into(),
            latency_ms: 2.0,
        },
        _ => return (404, "{}".into()),
    };
    (200, serde_json::to_string(&resp).unwrap())
}

impl EchoBridge {
    fn start(dim: usize, bad_dims: bool) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}", listener.local_addr().unwrap());
        let seen = Arc::new(Mutex::new(Vec::new()));
        let log = Arc::clone(&seen);
        thread::spawn(move || {
            let mock = MockProvider::new(dim, 0);
            for stream in listener.incoming() {
                let Ok(stream) = stream else { break };
                let mock = mock.clone();
                let log = Arc::clone(&log);
                thread::spawn(move || {
                    let mut writer = stream.try_clone().unwrap();
                    let mut reader = BufReader::new(stream);
                    while let Some((_method, path, body)) = read_request(&mut reader) {
                        if let Ok(req) = serde_json::from_slice::<BridgeRequest>(&body) {
                            log.lock().unwrap().push((path.clone(), req));
                        }
                        let (status, json) = respond(&mock, &path, &body, bad_dims);
                        let head = format!(
                            "HTTP/1.1 {status} OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\n\r\n",
                            json.len()
                        );
                        if writer.write_all(head.as_bytes()).and_then(|_| writer.write_all(json.as_bytes())).is_err() {
                            break;
                        }
                    }
                });
            }
        });
        Self { url, seen }
    }
}

#[test]
fn remote_text_vectors_match_mock() {
    let bridge = EchoBridge::start(32, false);
    let remote = RemoteProvider::connect(&bridge.url, Duration::from_secs(5)).unwrap();
    assert_eq!(remote.dim(), 32);
    assert_eq!(remote.model_ids(), ["echo".to_string()]);
    let labels: Vec<String> = (0..100).map(|i| format!("object {i}")).collect();
    let got = remote.embed_text(&labels).unwrap();
    let want = MockProvider::new(32, 0).embed_text(&labels).unwrap();
    for (g, w) in got.iter().zip(&want) {
        for (a, b) in g.iter().zip(w) {
            assert_eq!(*a, *b as f32 as f64);
        }
    }
    let seen = bridge.seen.lock().unwrap();
    assert_eq!(seen[0].0, "/embed/text");
    assert_eq!(seen[0].1.op, "text");
}

#[test]
fn remote_pixels_global_audio_and_codegen() {
    let bridge = EchoBridge::start(16, false);
    let remote = RemoteProvider::connect(&format!("{}/", bridge.url), Duration::from_secs(5)).unwrap();
    let mock = MockProvider::new(16, 0);
    let raster = ClassRaster {
        width: 2,
        height: 2,
        labels: vec![0, 1, 1, 255],
        vocabulary: vec!["floor".into(), "sofa".into()],
        frame_id: 9,
        region: None,
    };
    assert_eq!(remote.embed_pixels(&raster).unwrap(), mock.embed_pixels(&raster).unwrap());
    let g = remote.embed_global(&raster).unwrap();
    for (a, b) in g.iter().zip(mock.embed_global(&raster).unwrap()) {
        assert_eq!(*a, b as f32 as f64);
    }
    let sr = 16_000;
    let tone: Vec<f32> = (0..8000).map(|n| (0.5 * (2.0 * std::f64::consts::PI * 650.0 * n as f64 / sr as f64).sin()) as f32).collect();
    let a = remote.embed_audio(&tone, sr).unwrap();
    let want = mock.embed_label("glass breaking").unwrap();
    assert!(a.iter().zip(&want).all(|(x, y)| *x == *y as f32 as f64));
    assert_eq!(remote.codegen("# move in between the sink and the oven").unwrap(), "robot.move_in_between('sink', 'oven')\n");
}

#[test]
fn remote_dim_mismatch_is_reported() {
    let bridge = EchoBridge::start(8, true);
    let remote = RemoteProvider::connect(&bridge.url, Duration::from_secs(5)).unwrap();
    let err = remote.embed_text(&["chair".to_string()]).unwrap_err();
    assert!(matches!(err, ProviderError::Protocol(_) | ProviderError::DimMismatch { .. }), "{err}");
}

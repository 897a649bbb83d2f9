//! Client behaviour against scripted loopback servers, and golden wire files.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use bgforge_core::mask::BinaryMask;
use bgforge_core::policy::DEFAULT_PROMPT;
use bgforge_core::remote::{
    decode_request, encode_png_rgb, encode_response, healthcheck, InpaintJob, RemoteClient, RemoteError,
    RemoteOptions,
};
use image::RgbImage;

#[derive(Debug, Clone)]
struct Request {
    method: String,
    path: String,
    headers: Vec<(String, String)>,
    body: Vec<u8>,
}

impl Request {
    fn header(&self, name: &str) -> Option<&str> {
        self.headers.iter().find(|(k, _)| k.eq_ignore_ascii_case(name)).map(|(_, v)| v.as_str())
    }
}

fn read_request(stream: &mut TcpStream) -> Option<Request> {
    let mut reader = BufReader::new(stream.try_clone().ok()?);
    let mut line = String::new();
    reader.read_line(&mut line).ok()?;
    let mut parts = line.split_whitespace();
    let (method, path) = (parts.next()?.to_string(), parts.next()?.to_string());
    let mut headers = Vec::new();
    loop {
        let mut h = String::new();
        reader.read_line(&mut h).ok()?;
        let h = h.trim_end();
        if h.is_empty() {
            break;
        }
        let (k, v) = h.split_once(':')?;
        headers.push((k.trim().to_string(), v.trim().to_string()));
    }
    let len = headers
        .iter()
        .find(|(k, _)| k.eq_ignore_ascii_case("content-length"))
        .and_then(|(_, v)| v.parse().ok())
        .unwrap_or(0);
    let mut body = vec![0; len];
    reader.read_exact(&mut body).ok()?;
    Some(Request { method, path, headers, body })
}

fn respond(stream: &mut TcpStream, status: u16, body: &[u8]) {
    let head = format!(
        "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
        body.len()
    );
    let _ = stream.write_all(head.as_bytes());
    let _ = stream.write_all(body);
    let _ = stream.flush();
}

/// Serves every connection on its own thread with `handler`, which sees the
/// request and its zero-based arrival index.
struct FakeServer {
    url: String,
    requests: Arc<Mutex<Vec<Request>>>,
}

impl FakeServer {
    fn start(handler: impl Fn(&Request, usize) -> (u16, Vec<u8>) + Send + Sync + 'static) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}", listener.local_addr().unwrap());
        let requests = Arc::new(Mutex::new(Vec::new()));
        let (reqs, handler) = (requests.clone(), Arc::new(handler));
        thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { break };
                let (reqs, handler) = (reqs.clone(), handler.clone());
                thread::spawn(move || {
                    if let Some(req) = read_request(&mut stream) {
                        let index = {
                            let mut all = reqs.lock().unwrap();
                            all.push(req.clone());
                            all.len() - 1
                        };
                        let (status, body) = handler(&req, index);
                        respond(&mut stream, status, &body);
                    }
                });
            }
        });
        Self { url, requests }
    }

    fn requests(&self) -> Vec<Request> {
        self.requests.lock().unwrap().clone()
    }
}

fn job(w: u32, h: u32) -> InpaintJob {
    let img = RgbImage::from_fn(w, h, |x, y| image::Rgb([(x * 40) as u8, (y * 60) as u8, 200]));
    let mask = BinaryMask::from_fn(h as usize, w as usize, |_, c| c < w as usize / 2);
    InpaintJob::new(&img, &mask, DEFAULT_PROMPT, 31, 7.5, 42).unwrap()
}

fn options(retries: u32) -> RemoteOptions {
    RemoteOptions {
        timeout: Duration::from_secs(5),
        retries,
        backoff: Duration::from_millis(5),
        max_in_flight: 4,
        token: None,
    }
}

fn mirror(req: &Request, _: usize) -> (u16, Vec<u8>) {
    let job = decode_request(&req.body).unwrap();
    (200, encode_response(&job.image, "mirror/f8", 3))
}

#[test]
fn mirror_server_echoes_the_image() {
    let server = FakeServer::start(mirror);
    let job = job(8, 6);
    let client = RemoteClient::new(&server.url, RemoteOptions { token: Some("s3cret".into()), ..options(0) });
    let result = client.submit(&job).unwrap();
    assert_eq!(result.image, job.image);
    assert_eq!(result.backend_info, "mirror/f8");
    assert_eq!(result.wall_time_ms, 3);

    let reqs = server.requests();
    assert_eq!(reqs.len(), 1);
    assert_eq!((reqs[0].method.as_str(), reqs[0].path.as_str()), ("POST", "/v1/inpaint"));
    assert_eq!(reqs[0].header("Idempotency-Key"), Some(job.job_hash().as_str()));
    assert_eq!(reqs[0].header("Authorization"), Some("Bearer s3cret"));
    assert_eq!(reqs[0].header("Content-Type"), Some("application/json"));
    assert_eq!(reqs[0].body, job.to_request_body());
}

#[test]
fn transient_errors_are_retried_with_the_same_key() {
    let server = FakeServer::start(|req, i| match i {
        0 | 1 => (500, b"{\"error\":\"busy\"}".to_vec()),
        _ => mirror(req, i),
    });
    let job = job(4, 4);
    let result = RemoteClient::new(&server.url, options(3)).submit(&job).unwrap();
    assert_eq!(result.image, job.image);
    let reqs = server.requests();
    assert_eq!(reqs.len(), 3, "two failures then success");
    assert!(reqs.iter().all(|r| r.header("Idempotency-Key") == Some(job.job_hash().as_str())));
    assert!(reqs.iter().all(|r| r.body == reqs[0].body));
}

#[test]
fn rate_limits_are_retried() {
    let server = FakeServer::start(|req, i| if i == 0 { (429, b"{}".to_vec()) } else { mirror(req, i) });
    assert!(RemoteClient::new(&server.url, options(1)).submit(&job(4, 4)).is_ok());
    assert_eq!(server.requests().len(), 2);
}

#[test]
fn retries_are_bounded() {
    let server = FakeServer::start(|_, _| (503, b"down".to_vec()));
    let err = RemoteClient::new(&server.url, options(2)).submit(&job(4, 4)).unwrap_err();
    assert_eq!(err, RemoteError::ProtocolError { status: 503, body: "down".into() });
    assert_eq!(server.requests().len(), 3);
}

#[test]
fn client_errors_are_fatal() {
    let server = FakeServer::start(|_, _| (400, b"{\"error\":\"bad mask\"}".to_vec()));
    let err = RemoteClient::new(&server.url, options(5)).submit(&job(4, 4)).unwrap_err();
    assert!(matches!(err, RemoteError::ProtocolError { status: 400, .. }), "{err:?}");
    assert_eq!(server.requests().len(), 1);
}

#[test]
fn wrong_dimensions_are_rejected() {
    let server = FakeServer::start(|_, _| {
        let small = encode_png_rgb(&RgbImage::new(3, 3)).unwrap();
        (200, encode_response(&small, "broken/f8", 1))
    });
    let err = RemoteClient::new(&server.url, options(0)).submit(&job(8, 6)).unwrap_err();
    assert_eq!(err, RemoteError::DimensionViolation { expected: (8, 6), found: (3, 3) });
}

#[test]
fn malformed_response_is_a_protocol_error() {
    let server = FakeServer::start(|_, _| (200, b"{\"image\": 5}".to_vec()));
    let err = RemoteClient::new(&server.url, options(2)).submit(&job(4, 4)).unwrap_err();
    assert!(matches!(err, RemoteError::ProtocolError { status: 200, .. }), "{err:?}");
    assert_eq!(server.requests().len(), 1);
}

#[test]
fn silent_server_times_out() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let held = Arc::new(Mutex::new(Vec::new()));
    let keep = held.clone();
    thread::spawn(move || {
        for s in listener.incoming().flatten() {
            keep.lock().unwrap().push(s);
        }
    });
    let opts = RemoteOptions { timeout: Duration::from_millis(200), ..options(1) };
    let start = Instant::now();
    let err = RemoteClient::new(&url, opts).submit(&job(4, 4)).unwrap_err();
    assert_eq!(err, RemoteError::Timeout { attempts: 2 });
    assert!(start.elapsed() < Duration::from_secs(5));
}

#[test]
fn health_is_parsed() {
    let server = FakeServer::start(|req, _| {
        assert_eq!((req.method.as_str(), req.path.as_str()), ("GET", "/v1/health"));
        (200, br#"{"backend":"sd-inpaint","latent_factor":8,"max_steps":50,"model":"sd2-inpainting"}"#.to_vec())
    });
    let info = healthcheck(&server.url, Duration::from_secs(2)).unwrap();
    assert_eq!(info.kind, "sd-inpaint");
    assert_eq!(info.latent_factor, 8);
    assert_eq!(info.max_steps, Some(50));
    assert_eq!(info.descriptor(), "sd-inpaint/f8/sd2-inpainting");
}

#[test]
fn malformed_health_is_a_protocol_error() {
    let server = FakeServer::start(|_, _| (200, br#"{"backend":"x","latent_factor":"eight"}"#.to_vec()));
    let err = healthcheck(&server.url, Duration::from_secs(2)).unwrap_err();
    assert!(matches!(err, RemoteError::ProtocolError { .. }), "{err:?}");
}

#[test]
fn unreachable_port_fails_fast() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let start = Instant::now();
    let err = healthcheck(&format!("http://127.0.0.1:{port}"), Duration::from_secs(2)).unwrap_err();
    assert!(matches!(err, RemoteError::Unreachable(_)), "{err:?}");
    assert!(start.elapsed() < Duration::from_secs(3));
}

#[test]
fn in_flight_limit_is_respected() {
    let active = Arc::new(AtomicUsize::new(0));
    let peak = Arc::new(AtomicUsize::new(0));
    let (a, pk) = (active.clone(), peak.clone());
    let server = FakeServer::start(move |req, i| {
        let now = a.fetch_add(1, Ordering::SeqCst) + 1;
        pk.fetch_max(now, Ordering::SeqCst);
        thread::sleep(Duration::from_millis(60));
        a.fetch_sub(1, Ordering::SeqCst);
        mirror(req, i)
    });
    let client = Arc::new(RemoteClient::new(&server.url, RemoteOptions { max_in_flight: 2, ..options(0) }));
    let handles: Vec<_> = (0..6)
        .map(|_| {
            let c = client.clone();
            thread::spawn(move || c.submit(&job(4, 4)).unwrap())
        })
        .collect();
    for h in handles {
        h.join().unwrap();
    }
    assert_eq!(server.requests().len(), 6);
    assert!(peak.load(Ordering::SeqCst) <= 2, "peak {}", peak.load(Ordering::SeqCst));
}

#[test]
fn invalid_jobs_are_not_sent() {
    let mut j = job(4, 4);
    j.steps = 0;
    let err = RemoteClient::new("http://127.0.0.1:9", options(0)).submit(&j).unwrap_err();
    assert!(matches!(err, RemoteError::InvalidJob(_)));
}

// ---------------------------------------------------------------------------
// Golden files. Regenerate with BGFORGE_BLESS=1 after an intentional change.
// ---------------------------------------------------------------------------

fn golden(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

fn check_golden(name: &str, actual: &[u8]) {
    let path = golden(name);
    if std::env::var_os("BGFORGE_BLESS").is_some() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, actual).unwrap();
    }
    let expected = std::fs::read(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert!(
        expected == actual,
        "{} differs:\n  expected {}\n  actual   {}",
        name,
        String::from_utf8_lossy(&expected),
        String::from_utf8_lossy(actual)
    );
}

#[test]
fn golden_request_is_byte_exact() {
    let job = job(4, 3);
    check_golden("inpaint_request.json", &job.to_request_body());
    let decoded = decode_request(&std::fs::read(golden("inpaint_request.json")).unwrap()).unwrap();
    assert_eq!(decoded, job);
}

#[test]
fn golden_mirror_response_is_byte_exact() {
    let job = job(4, 3);
    check_golden("inpaint_response_mirror.json", &encode_response(&job.image, "mirror/f8", 0));
}

#[test]
fn golden_request_keys_are_sorted_and_complete() {
    let body: serde_json::Value = serde_json::from_slice(&std::fs::read(golden("inpaint_request.json")).unwrap()).unwrap();
    let text = String::from_utf8(std::fs::read(golden("inpaint_request.json")).unwrap()).unwrap();
    let keys: Vec<&str> = body.as_object().unwrap().keys().map(String::as_str).collect();
    let expected = ["guidance_scale", "height", "image", "mask", "prompt", "seed", "steps", "width"];
    assert_eq!(keys, expected);
    let positions: Vec<usize> = expected.iter().map(|k| text.find(&format!("\"{k}\"")).unwrap()).collect();
    assert!(positions.windows(2).all(|w| w[0] < w[1]), "keys not in canonical order");
}

#[test]
fn unknown_request_fields_are_refused() {
    let mut body: serde_json::Value = serde_json::from_slice(&job(4, 4).to_request_body()).unwrap();
    body["strength"] = serde_json::json!(0.8);
    assert!(decode_request(&serde_json::to_vec(&body).unwrap()).is_err());
}

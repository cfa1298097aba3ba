#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;

use feat_service::{api, Service, ServiceConfig};
use tokio::sync::oneshot;

pub const CASES: [&str; 12] = ["C01", "C02", "C03", "C04", "C05", "C06", "C07", "C08", "C09", "C10", "C11", "C12"];

pub fn reference_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/reference")
}

pub fn reference_config(data_dir: &Path) -> ServiceConfig {
    let mut cfg = ServiceConfig::load(&reference_dir().join("feat.toml")).unwrap();
    cfg.data_dir = data_dir.to_path_buf();
    cfg
}

pub fn case_bytes(case_id: &str) -> Vec<u8> {
    std::fs::read(reference_dir().join("cases").join(format!("{case_id}.json"))).unwrap()
}

pub fn golden_path(case_id: &str) -> PathBuf {
    reference_dir().join("golden").join(format!("{case_id}.ndjson"))
}

/// The API served in-process on an ephemeral port. Stops on drop.
pub struct Server {
    pub base: String,
    pub service: Arc<Service>,
    stop: Option<oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl Server {
    pub fn start(cfg: ServiceConfig) -> Server {
        let service = Arc::new(Service::new(cfg).unwrap());
        let (stop, stopped) = oneshot::channel::<()>();
        let (ready, addr) = std::sync::mpsc::channel();
        let s = service.clone();
        let thread = std::thread::spawn(move || {
            let rt = tokio::runtime::Runtime::new().unwrap();
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
                ready.send(listener.local_addr().unwrap()).unwrap();
                api::serve(s, listener, async {
                    let _ = stopped.await;
                })
                .await
                .unwrap();
            });
        });
        let addr = addr.recv().unwrap();
        Server {
            base: format!("http://{addr}"),
            service,
            stop: Some(stop),
            thread: Some(thread),
        }
    }

    pub fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        if let Some(s) = self.stop.take() {
            let _ = s.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

pub fn agent() -> ureq::Agent {
    ureq::Agent::config_builder().http_status_as_error(false).build().into()
}

pub struct Reply {
    pub status: u16,
    pub content_type: String,
    pub body: String,
}

impl Reply {
    pub fn json(&self) -> serde_json::Value {
        serde_json::from_str(&self.body).unwrap_or_else(|e| panic!("{e}: {}", self.body))
    }
}

fn reply(r: Result<ureq::http::Response<ureq::Body>, ureq::Error>) -> Reply {
    let mut r = r.unwrap();
    let content_type = r
        .headers()
        .get("content-type")
        .and_then(|v| v.to_str().ok())
        .unwrap_or_default()
        .to_string();
    Reply {
        status: r.status().as_u16(),
        content_type,
        body: r.body_mut().read_to_string().unwrap(),
    }
}

pub fn get(url: &str) -> Reply {
    reply(agent().get(url).call())
}

pub fn post(url: &str, body: &str) -> Reply {
    reply(agent().post(url).header("content-type", "application/json").send(body))
}

/// Polls the run until it leaves `queued`/`running`.
pub fn wait_settled(server: &Server, run_id: &str) -> serde_json::Value {
    let deadline = std::time::Instant::now() + std::time::Duration::from_secs(20);
    loop {
        let v = get(&server.url(&format!("/runs/{run_id}"))).json();
        let status = v["status"].as_str().unwrap().to_string();
        if !v["executing"].as_bool().unwrap() && status != "queued" && status != "running" {
            return v;
        }
        assert!(std::time::Instant::now() < deadline, "run {run_id} did not settle: {v}");
        std::thread::sleep(std::time::Duration::from_millis(10));
    }
}

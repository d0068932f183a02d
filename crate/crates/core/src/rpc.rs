//! JSON-RPC 2.0 over newline-delimited TCP.
//!
//! The environment server exposes `tools/list`, `tools/call`,
//! `episode/create`, `episode/snapshot` and `episode/restore`. The same
//! client speaks to external policy, generator and embedder endpoints.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::env::{Environment, Episode, StateDigest};
use crate::registry::{Args, Manifest, RegistryError, RegistrySource, ToolRegistry};
use crate::seed::SeedData;

pub const PARSE_ERROR: i64 = -32700;
pub const INVALID_REQUEST: i64 = -32600;
pub const METHOD_NOT_FOUND: i64 = -32601;
pub const INVALID_PARAMS: i64 = -32602;
/// Application-level failure (unknown tool, unknown episode, bad digest).
pub const SERVER_ERROR: i64 = -32000;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RpcError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("protocol: {0}")]
    Protocol(String),
    #[error("remote error {code}: {message}")]
    Remote { code: i64, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RpcErrorObject {
    pub code: i64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub jsonrpc: String,
    pub id: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<RpcErrorObject>,
}

impl Response {
    fn ok(id: Value, result: Value) -> Self {
        Self {
            jsonrpc: "2.0".into(),
            id,
            result: Some(result),
            error: None,
        }
    }

    fn err(id: Value, code: i64, message: impl Into<String>) -> Self {
        Self {
            jsonrpc: "2.0".into(),
            id,
            result: None,
            error: Some(RpcErrorObject {
                code,
                message: message.into(),
            }),
        }
    }
}

/// Blocking client holding one connection.
pub struct RpcClient {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
    next_id: u64,
}

impl RpcClient {
    pub fn connect(addr: &str) -> Result<Self, RpcError> {
        Self::connect_timeout(addr, Duration::from_secs(5))
    }

    pub fn connect_timeout(addr: &str, timeout: Duration) -> Result<Self, RpcError> {
        let sock = addr
            .to_socket_addrs()
            .map_err(|e| RpcError::Transport(format!("{addr}: {e}")))?
            .next()
            .ok_or_else(|| RpcError::Transport(format!("{addr}: no address")))?;
        let stream = TcpStream::connect_timeout(&sock, timeout)
            .map_err(|e| RpcError::Transport(format!("{addr}: {e}")))?;
        let writer = stream
            .try_clone()
            .map_err(|e| RpcError::Transport(e.to_string()))?;
        Ok(Self {
            reader: BufReader::new(stream),
            writer,
            next_id: 1,
        })
    }

    pub fn call(&mut self, method: &str, params: Value) -> Result<Value, RpcError> {
        let id = self.next_id;
        self.next_id += 1;
        let req = json!({"jsonrpc": "2.0", "id": id, "method": method, "params": params});
        let mut line = serde_json::to_string(&req).expect("request serializes");
        line.push('\n');
        self.writer
            .write_all(line.as_bytes())
            .and_then(|()| self.writer.flush())
            .map_err(|e| RpcError::Transport(e.to_string()))?;
        let mut buf = String::new();
        let n = self
            .reader
            .read_line(&mut buf)
            .map_err(|e| RpcError::Transport(e.to_string()))?;
        if n == 0 {
            return Err(RpcError::Transport("connection closed".into()));
        }
        let resp: Response = serde_json::from_str(buf.trim_end())
            .map_err(|e| RpcError::Protocol(format!("bad response: {e}")))?;
        if resp.id != json!(id) {
            return Err(RpcError::Protocol(format!(
                "response id {} for request {id}",
                resp.id
            )));
        }
        match (resp.result, resp.error) {
            (_, Some(e)) => Err(RpcError::Remote {
                code: e.code,
                message: e.message,
            }),
            (Some(r), None) => Ok(r),
            (None, None) => Err(RpcError::Protocol(
                "response has neither result nor error".into(),
            )),
        }
    }
}

/// Fetches the tool listing from `endpoint` and normalizes it exactly like a
/// manifest file.
pub fn discover_tools(endpoint: &str) -> Result<ToolRegistry, RegistryError> {
    let mut client =
        RpcClient::connect(endpoint).map_err(|e| RegistryError::Transport(e.to_string()))?;
    let listing = client.call("tools/list", json!({})).map_err(|e| match e {
        RpcError::Transport(m) => RegistryError::Transport(m),
        other => RegistryError::Protocol(other.to_string()),
    })?;
    let manifest: Manifest = serde_json::from_value(listing)
        .map_err(|e| RegistryError::Protocol(format!("tools/list result: {e}")))?;
    ToolRegistry::from_manifest(&manifest, RegistrySource::ProtocolDiscovery).map_err(|e| match e {
        RegistryError::Protocol(_) | RegistryError::Transport(_) => e,
        other => RegistryError::Protocol(other.to_string()),
    })
}

/// Per-endpoint memo of discovered registries.
#[derive(Default)]
pub struct RegistryCache {
    entries: Mutex<BTreeMap<String, Arc<ToolRegistry>>>,
}

impl RegistryCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get_or_discover(&self, endpoint: &str) -> Result<Arc<ToolRegistry>, RegistryError> {
        if let Some(r) = self.entries.lock().expect("cache lock").get(endpoint) {
            return Ok(Arc::clone(r));
        }
        let reg = Arc::new(discover_tools(endpoint)?);
        self.entries
            .lock()
            .expect("cache lock")
            .insert(endpoint.to_string(), Arc::clone(&reg));
        Ok(reg)
    }

    pub fn invalidate(&self, endpoint: &str) {
        self.entries.lock().expect("cache lock").remove(endpoint);
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Request handler behind the TCP server. Usable directly for in-process
/// tests.
pub struct EnvService {
    env: Arc<Environment>,
    seed: SeedData,
    rng_seed: u64,
    episodes: Mutex<BTreeMap<String, Arc<Mutex<Episode>>>>,
    default_episode: Arc<Mutex<Episode>>,
}

#[derive(Deserialize)]
struct CallParams {
    name: String,
    #[serde(default)]
    arguments: Args,
    #[serde(default)]
    episode_id: Option<String>,
}

#[derive(Deserialize)]
struct CreateParams {
    #[serde(default)]
    seed: Option<SeedData>,
    #[serde(default)]
    rng_seed: Option<u64>,
}

#[derive(Deserialize)]
struct EpisodeRef {
    episode_id: String,
}

#[derive(Deserialize)]
struct RestoreParams {
    episode_id: String,
    digest: StateDigest,
}

impl EnvService {
    /// Calls without an `episode_id` go to a default episode created here.
    pub fn new(
        env: Arc<Environment>,
        seed: SeedData,
        rng_seed: u64,
    ) -> Result<Self, crate::env::EnvError> {
        let default_episode = Arc::new(Mutex::new(env.create_episode(&seed, rng_seed)?));
        Ok(Self {
            env,
            seed,
            rng_seed,
            episodes: Mutex::new(BTreeMap::new()),
            default_episode,
        })
    }

    fn episode(&self, id: Option<&str>) -> Result<Arc<Mutex<Episode>>, String> {
        match id {
            None => Ok(Arc::clone(&self.default_episode)),
            Some(id) => self
                .episodes
                .lock()
                .expect("episode table lock")
                .get(id)
                .cloned()
                .ok_or_else(|| format!("unknown episode `{id}`")),
        }
    }

    /// Handles one raw request line and returns the response line.
    pub fn handle_line(&self, line: &str) -> String {
        let resp = match serde_json::from_str::<Value>(line) {
            Err(e) => Response::err(Value::Null, PARSE_ERROR, format!("parse error: {e}")),
            Ok(v) => self.handle_value(v),
        };
        serde_json::to_string(&resp).expect("response serializes")
    }

    fn handle_value(&self, req: Value) -> Response {
        let id = req.get("id").cloned().unwrap_or(Value::Null);
        let Some(obj) = req.as_object() else {
            return Response::err(id, INVALID_REQUEST, "request must be an object");
        };
        if obj.get("jsonrpc") != Some(&json!("2.0")) {
            return Response::err(id, INVALID_REQUEST, "jsonrpc must be \"2.0\"");
        }
        let Some(method) = obj.get("method").and_then(Value::as_str) else {
            return Response::err(id, INVALID_REQUEST, "missing method");
        };
        let params = obj.get("params").cloned().unwrap_or_else(|| json!({}));
        match self.dispatch(method, params) {
            Ok(v) => Response::ok(id, v),
            Err((code, msg)) => Response::err(id, code, msg),
        }
    }

    fn dispatch(&self, method: &str, params: Value) -> Result<Value, (i64, String)> {
        fn parse<T: for<'de> Deserialize<'de>>(v: Value) -> Result<T, (i64, String)> {
            serde_json::from_value(v).map_err(|e| (INVALID_PARAMS, e.to_string()))
        }
        match method {
            "tools/list" => Ok(serde_json::to_value(self.env.registry().to_manifest())
                .expect("manifest serializes")),
            "tools/call" => {
                let p: CallParams = parse(params)?;
                let ep = self
                    .episode(p.episode_id.as_deref())
                    .map_err(|m| (SERVER_ERROR, m))?;
                let mut ep = ep.lock().expect("episode lock");
                let r = ep
                    .execute_tool(&p.name, &p.arguments)
                    .map_err(|e| (SERVER_ERROR, e.to_string()))?;
                Ok(serde_json::to_value(r).expect("result serializes"))
            }
            "episode/create" => {
                let p: CreateParams = parse(params)?;
                let seed = p.seed.unwrap_or_else(|| self.seed.clone());
                let ep = self
                    .env
                    .create_episode(&seed, p.rng_seed.unwrap_or(self.rng_seed))
                    .map_err(|e| (SERVER_ERROR, e.to_string()))?;
                let id = ep.id().to_string();
                self.episodes
                    .lock()
                    .expect("episode table lock")
                    .insert(id.clone(), Arc::new(Mutex::new(ep)));
                Ok(json!({"episode_id": id}))
            }
            "episode/snapshot" => {
                let p: EpisodeRef = parse(params)?;
                let ep = self
                    .episode(Some(&p.episode_id))
                    .map_err(|m| (SERVER_ERROR, m))?;
                let digest = ep.lock().expect("episode lock").snapshot();
                Ok(serde_json::to_value(digest).expect("digest serializes"))
            }
            "episode/restore" => {
                let p: RestoreParams = parse(params)?;
                let ep = self
                    .episode(Some(&p.episode_id))
                    .map_err(|m| (SERVER_ERROR, m))?;
                ep.lock()
                    .expect("episode lock")
                    .restore(&p.digest)
                    .map_err(|e| (SERVER_ERROR, e.to_string()))?;
                Ok(json!({}))
            }
            other => Err((METHOD_NOT_FOUND, format!("method `{other}` not found"))),
        }
    }
}

/// Accepts connections forever, one thread per connection.
pub fn serve(listener: TcpListener, service: Arc<EnvService>) -> std::io::Result<()> {
    for stream in listener.incoming() {
        let stream = match stream {
            Ok(s) => s,
            Err(e) => {
                log::warn!("accept failed: {e}");
                continue;
            }
        };
        let service = Arc::clone(&service);
        std::thread::spawn(move || {
            if let Err(e) = serve_connection(stream, &service) {
                log::debug!("connection closed: {e}");
            }
        });
    }
    Ok(())
}

fn serve_connection(stream: TcpStream, service: &EnvService) -> std::io::Result<()> {
    let mut writer = stream.try_clone()?;
    let reader = BufReader::new(stream);
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut out = service.handle_line(&line);
        out.push('\n');
        writer.write_all(out.as_bytes())?;
        writer.flush()?;
    }
    Ok(())
}

/// Binds an ephemeral local port and serves in a background thread.
/// Returns the bound address.
pub fn spawn_local(service: Arc<EnvService>) -> std::io::Result<String> {
    let listener = TcpListener::bind("127.0.0.1:0")?;
    let addr = listener.local_addr()?.to_string();
    std::thread::spawn(move || serve(listener, service));
    Ok(addr)
}

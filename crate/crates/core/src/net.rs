//! Blocking UDP drivers for the sans-IO nodes. Each node runs on its own
//! thread and owns all of its state; the socket read timeout doubles as the
//! release timer for the pool.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::collections::HashMap;
use std::io;
use std::net::{SocketAddr, ToSocketAddrs, UdpSocket};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use crate::client::{Client, ClientConfig, ClientCounters, EmissionKind, TickSchedule};
use crate::mixnode::{MixConfig, MixNode, NodeMetrics};
use crate::packet::SphinxPacket;
use crate::provider::Provider;
use crate::rates::Rates;
use crate::topology::{generate_network, NetworkShape, Topology};
use crate::transport::{deframe, frame, FrameKind, PullRequest, MAX_DATAGRAM_LEN};

const MAX_WAIT_S: f64 = 0.05;
const MIN_WAIT_S: f64 = 0.000_2;

/// Seconds since a shared start instant.
#[derive(Debug, Clone, Copy)]
pub struct Clock(Instant);

impl Clock {
    pub fn new() -> Self {
        Self(Instant::now())
    }

    pub fn now(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}

impl Default for Clock {
    fn default() -> Self {
        Self::new()
    }
}

pub type MetricsSink = Box<dyn FnMut(&str) + Send>;

#[derive(Default)]
pub struct DriverOptions {
    /// Emit a JSON metrics line this often.
    pub metrics_interval_s: Option<f64>,
    pub metrics_sink: Option<MetricsSink>,
    /// Loop health is evaluated over windows of this length (mixes only).
    pub health_window_s: Option<f64>,
}

impl DriverOptions {
    fn emit(&mut self, line: &str) {
        match &mut self.metrics_sink {
            Some(sink) => sink(line),
            None => log::info!("{line}"),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct NodeReport {
    pub id: String,
    /// Packets received during each whole second since the clock started.
    pub received_per_second: Vec<u64>,
    /// Wall time spent unwrapping each received packet.
    pub processing_s: Vec<f64>,
    /// Thread CPU time for the same work; unaffected by preemption.
    pub processing_cpu_s: Vec<f64>,
    pub metrics: NodeMetrics,
    pub loop_latencies: Vec<f64>,
    pub send_errors: u64,
}

impl NodeReport {
    fn count_arrival(&mut self, now: f64) {
        let sec = now as usize;
        if self.received_per_second.len() <= sec {
            self.received_per_second.resize(sec + 1, 0);
        }
        self.received_per_second[sec] += 1;
    }
}

/// Resolves and caches `host:port` strings.
#[derive(Default)]
struct AddrCache(HashMap<String, SocketAddr>);

impl AddrCache {
    fn resolve(&mut self, addr: &str) -> Option<SocketAddr> {
        if let Some(a) = self.0.get(addr) {
            return Some(*a);
        }
        let a = addr.to_socket_addrs().ok()?.next()?;
        self.0.insert(addr.to_owned(), a);
        Some(a)
    }
}

fn send_packet(socket: &UdpSocket, addrs: &mut AddrCache, to: &str, packet: &SphinxPacket) -> bool {
    let Some(dest) = addrs.resolve(to) else {
        log::warn!("cannot resolve {to}");
        return false;
    };
    let datagram = frame(FrameKind::Packet, &packet.to_bytes()).expect("packet has fixed size");
    match socket.send_to(&datagram, dest) {
        Ok(_) => true,
        Err(e) => {
            log::debug!("send to {to} failed: {e}");
            false
        }
    }
}

/// CPU time consumed by the calling thread.
pub fn thread_cpu_time() -> f64 {
    let mut ts = libc::timespec { tv_sec: 0, tv_nsec: 0 };
    // SAFETY: `ts` is a valid out-pointer and the clock id is a constant.
    let rc = unsafe { libc::clock_gettime(libc::CLOCK_THREAD_CPUTIME_ID, &mut ts) };
    if rc != 0 {
        return 0.0;
    }
    ts.tv_sec as f64 + ts.tv_nsec as f64 * 1e-9
}

struct ProcessingTimer {
    wall: Instant,
    cpu: f64,
}

impl ProcessingTimer {
    fn start() -> Self {
        Self { wall: Instant::now(), cpu: thread_cpu_time() }
    }

    fn finish(self, report: &mut NodeReport) {
        report.processing_cpu_s.push(thread_cpu_time() - self.cpu);
        report.processing_s.push(self.wall.elapsed().as_secs_f64());
    }
}

fn wait_until(socket: &UdpSocket, now: f64, deadline: f64) -> io::Result<()> {
    let wait = (deadline - now).clamp(MIN_WAIT_S, MAX_WAIT_S);
    socket.set_read_timeout(Some(Duration::from_secs_f64(wait)))
}

fn is_timeout(e: &io::Error) -> bool {
    matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut)
}

pub fn run_mix<R: Rng>(
    socket: UdpSocket,
    mut node: MixNode,
    topology: &Topology,
    rng: &mut R,
    clock: Clock,
    stop: &AtomicBool,
    mut opts: DriverOptions,
) -> io::Result<NodeReport> {
    let mut report = NodeReport { id: node.cfg.id.clone(), ..Default::default() };
    let mut addrs = AddrCache::default();
    let mut buf = [0u8; MAX_DATAGRAM_LEN + 64];
    let start = clock.now();
    let mut pending_loop = node
        .generate_mix_loop(topology, rng, start)
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e.to_string()))?;
    let mut next_metrics = opts.metrics_interval_s.map_or(f64::INFINITY, |i| start + i);
    let mut next_health = opts.health_window_s.map_or(f64::INFINITY, |w| start + w);

    while !stop.load(Ordering::Relaxed) {
        let now = clock.now();
        while let Some((_, fwd)) = node.next_release(now) {
            if !send_packet(&socket, &mut addrs, &fwd.next.next_addr, &fwd.packet) {
                report.send_errors += 1;
            }
        }
        if let Some(l) = pending_loop.as_ref().filter(|l| l.send_time <= now) {
            if !send_packet(&socket, &mut addrs, &l.first_hop_addr, &l.packet) {
                report.send_errors += 1;
            }
            pending_loop = node
                .generate_mix_loop(topology, rng, now)
                .map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e.to_string()))?;
        }
        if now >= next_metrics {
            let line = node.metrics_line(now);
            opts.emit(&line);
            next_metrics += opts.metrics_interval_s.unwrap_or(f64::INFINITY);
        }
        if now >= next_health {
            node.close_health_window();
            next_health += opts.health_window_s.unwrap_or(f64::INFINITY);
        }

        let deadline = [
            node.core.pool.peek_release().unwrap_or(f64::INFINITY),
            pending_loop.as_ref().map_or(f64::INFINITY, |l| l.send_time),
            next_metrics,
            next_health,
        ]
        .into_iter()
        .fold(f64::INFINITY, f64::min);
        wait_until(&socket, now, deadline)?;
        let n = match socket.recv_from(&mut buf) {
            Ok((n, _)) => n,
            Err(e) if is_timeout(&e) => continue,
            Err(e) => return Err(e),
        };
        let now = clock.now();
        let Ok((FrameKind::Packet, body)) = deframe(&buf[..n]) else {
            node.core.metrics.dropped_malformed += 1;
            continue;
        };
        report.count_arrival(now);
        let timer = ProcessingTimer::start();
        if let Ok(packet) = SphinxPacket::from_bytes(body) {
            node.on_receive(&packet, now);
        } else {
            node.core.metrics.dropped_malformed += 1;
        }
        timer.finish(&mut report);
    }
    report.metrics = node.core.metrics;
    report.loop_latencies = node.loop_latencies().to_vec();
    Ok(report)
}

pub fn run_provider<R: Rng>(
    socket: UdpSocket,
    mut provider: Provider,
    rng: &mut R,
    clock: Clock,
    stop: &AtomicBool,
    mut opts: DriverOptions,
) -> io::Result<NodeReport> {
    let mut report = NodeReport { id: provider.id.clone(), ..Default::default() };
    let mut addrs = AddrCache::default();
    let mut buf = [0u8; MAX_DATAGRAM_LEN + 64];
    let mut next_metrics = opts.metrics_interval_s.map_or(f64::INFINITY, |i| clock.now() + i);

    while !stop.load(Ordering::Relaxed) {
        let now = clock.now();
        while let Some((_, fwd)) = provider.next_release(now) {
            if !send_packet(&socket, &mut addrs, &fwd.next.next_addr, &fwd.packet) {
                report.send_errors += 1;
            }
        }
        if now >= next_metrics {
            let line = provider.metrics_line(now);
            opts.emit(&line);
            next_metrics += opts.metrics_interval_s.unwrap_or(f64::INFINITY);
        }
        let deadline = provider.core.pool.peek_release().unwrap_or(f64::INFINITY).min(next_metrics);
        wait_until(&socket, now, deadline)?;
        let (n, from) = match socket.recv_from(&mut buf) {
            Ok(r) => r,
            Err(e) if is_timeout(&e) => continue,
            Err(e) => return Err(e),
        };
        let now = clock.now();
        match deframe(&buf[..n]) {
            Ok((FrameKind::Packet, body)) => {
                report.count_arrival(now);
                let timer = ProcessingTimer::start();
                match SphinxPacket::from_bytes(body) {
                    Ok(packet) => {
                        provider.on_receive(&packet, now);
                    }
                    Err(_) => provider.core.metrics.dropped_malformed += 1,
                }
                timer.finish(&mut report);
            }
            Ok((FrameKind::PullReq, body)) => {
                let Ok(req) = PullRequest::decode(body) else { continue };
                match provider.handle_authenticated_pull(&req.client_id, &req.token, rng) {
                    Ok(resp) => {
                        for item in resp.items {
                            let datagram = frame(FrameKind::PullItem, &item.payload).expect("items have fixed size");
                            if socket.send_to(&datagram, from).is_err() {
                                report.send_errors += 1;
                            }
                        }
                    }
                    Err(e) => log::debug!("{}: pull rejected: {e}", provider.id),
                }
            }
            _ => provider.core.metrics.dropped_malformed += 1,
        }
    }
    report.metrics = provider.core.metrics;
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct WireRecord {
    pub time: f64,
    pub kind: EmissionKind,
    pub len: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ClientReport {
    pub id: String,
    pub counters: ClientCounters,
    pub received: Vec<Vec<u8>>,
    pub loop_rtts: Vec<f64>,
    /// Every packet datagram the client put on the wire.
    pub wire: Vec<WireRecord>,
}

pub fn run_client<R: Rng>(
    socket: UdpSocket,
    mut client: Client,
    topology: &Topology,
    rng: &mut R,
    clock: Clock,
    stop: &AtomicBool,
) -> io::Result<ClientReport> {
    let provider_addr = topology
        .provider(&client.cfg.provider_id)
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "client provider not in directory"))?
        .addr
        .clone();
    let mut addrs = AddrCache::default();
    let provider = addrs
        .resolve(&provider_addr)
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, format!("cannot resolve {provider_addr}")))?;
    let mut buf = [0u8; MAX_DATAGRAM_LEN + 64];
    let mut schedule = TickSchedule::new(&client.cfg.rates, rng, clock.now());
    let pull_period = client.cfg.pull_period_s;
    let mut next_pull = clock.now() + pull_period;
    let mut wire = Vec::new();

    while !stop.load(Ordering::Relaxed) {
        let now = clock.now();
        while schedule.next().0 <= now {
            let (t, e) = schedule.fire(&mut client, topology, rng).map_err(|e| io::Error::other(e.to_string()))?;
            let datagram = frame(FrameKind::Packet, &e.packet.to_bytes()).expect("packet has fixed size");
            socket.send_to(&datagram, provider)?;
            wire.push(WireRecord { time: t, kind: e.kind, len: datagram.len() });
        }
        if now >= next_pull {
            let req = client.pull_request(rng).encode().map_err(|e| io::Error::other(e.to_string()))?;
            socket.send_to(&frame(FrameKind::PullReq, &req).expect("fixed size"), provider)?;
            next_pull += pull_period;
        }
        wait_until(&socket, now, schedule.next().0.min(next_pull))?;
        let n = match socket.recv_from(&mut buf) {
            Ok((n, _)) => n,
            Err(e) if is_timeout(&e) => continue,
            Err(e) => return Err(e),
        };
        if let Ok((FrameKind::PullItem, body)) = deframe(&buf[..n]) {
            client.on_pull_item(body, clock.now());
        }
    }
    Ok(ClientReport {
        id: client.cfg.id.clone(),
        counters: client.counters,
        received: client.received,
        loop_rtts: client.loop_rtts,
        wire,
    })
}

/// Parameters for an all-loopback deployment.
#[derive(Debug, Clone)]
pub struct LoopbackConfig {
    pub shape: NetworkShape,
    /// Client rates and the per-hop `mu`; `lambda_m` drives the mixes.
    pub rates: Rates,
    pub pull_period_s: f64,
    pub seed: u64,
    /// Messages enqueued before start: `(sender index, recipient index, body)`.
    pub messages: Vec<(usize, usize, Vec<u8>)>,
}

pub struct LoopbackDeployment {
    pub topology: Arc<Topology>,
    pub clock: Clock,
    stop: Arc<AtomicBool>,
    mixes: Vec<JoinHandle<io::Result<NodeReport>>>,
    providers: Vec<JoinHandle<io::Result<NodeReport>>>,
    clients: Vec<JoinHandle<io::Result<ClientReport>>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DeploymentReport {
    pub mixes: Vec<NodeReport>,
    pub providers: Vec<NodeReport>,
    pub clients: Vec<ClientReport>,
}

fn node_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index + 16);
    rng
}

fn join<T>(h: JoinHandle<io::Result<T>>) -> io::Result<T> {
    h.join().map_err(|_| io::Error::other("node thread panicked"))?
}

/// Binds every node to an ephemeral 127.0.0.1 port, generates the directory
/// from the bound addresses and starts one thread per node.
pub fn deploy_loopback(cfg: &LoopbackConfig) -> io::Result<LoopbackDeployment> {
    let mut rng = node_rng(cfg.seed, 0);
    let mut sockets: HashMap<String, UdpSocket> = HashMap::new();
    let mut bind_error = None;
    let (topology, secrets) = generate_network(
        cfg.shape,
        |id| match UdpSocket::bind("127.0.0.1:0").and_then(|s| Ok((s.local_addr()?, s))) {
            Ok((addr, s)) => {
                sockets.insert(id.to_owned(), s);
                addr.to_string()
            }
            Err(e) => {
                bind_error = Some(e);
                String::from("0.0.0.0:0")
            }
        },
        &mut rng,
    );
    if let Some(e) = bind_error {
        return Err(e);
    }
    let key = |id: &str| secrets.get(id).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e.to_string()));
    let topology = Arc::new(topology);
    let clock = Clock::new();
    let stop = Arc::new(AtomicBool::new(false));
    let mut stream = 1u64;

    let mut mixes = Vec::new();
    for (layer, node) in topology.mixes() {
        let mut mc = MixConfig::new(node.id.clone(), key(&node.id)?, layer);
        mc.lambda_m = cfg.rates.lambda_m;
        mc.mu = cfg.rates.mu;
        let mut rng = node_rng(cfg.seed, stream);
        stream += 1;
        let mix = MixNode::new(mc, &mut rng);
        let socket = sockets.remove(&node.id).expect("bound above");
        let (topo, stop) = (topology.clone(), stop.clone());
        mixes.push(std::thread::spawn(move || {
            run_mix(socket, mix, &topo, &mut rng, clock, &stop, DriverOptions::default())
        }));
    }

    let mut providers = Vec::new();
    for node in &topology.providers {
        let mut p = Provider::new(node.id.clone(), key(&node.id)?);
        p.register_from(&topology);
        let mut rng = node_rng(cfg.seed, stream);
        stream += 1;
        let socket = sockets.remove(&node.id).expect("bound above");
        let stop = stop.clone();
        providers.push(std::thread::spawn(move || {
            run_provider(socket, p, &mut rng, clock, &stop, DriverOptions::default())
        }));
    }

    let mut clients = Vec::new();
    for (i, c) in topology.clients.iter().enumerate() {
        let ccfg = ClientConfig {
            id: c.id.clone(),
            secret_key: key(&c.id)?,
            provider_id: c.provider_id.clone(),
            token: c.token,
            rates: cfg.rates,
            pull_period_s: cfg.pull_period_s,
            debug_type_flags: false,
        };
        let mut rng = node_rng(cfg.seed, stream);
        stream += 1;
        let mut client = Client::new(ccfg, &mut rng);
        for (_, to, body) in cfg.messages.iter().filter(|m| m.0 == i) {
            let recipient = &topology.clients[*to].id;
            client
                .enqueue_message(recipient, body.clone())
                .map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e.to_string()))?;
        }
        let socket = UdpSocket::bind("127.0.0.1:0")?;
        let (topo, stop) = (topology.clone(), stop.clone());
        clients.push(std::thread::spawn(move || run_client(socket, client, &topo, &mut rng, clock, &stop)));
    }

    Ok(LoopbackDeployment { topology, clock, stop, mixes, providers, clients })
}

impl LoopbackDeployment {
    /// Signals every node to stop and collects their reports.
    pub fn shutdown(self) -> io::Result<DeploymentReport> {
        self.stop.store(true, Ordering::Relaxed);
        Ok(DeploymentReport {
            clients: self.clients.into_iter().map(join).collect::<io::Result<_>>()?,
            mixes: self.mixes.into_iter().map(join).collect::<io::Result<_>>()?,
            providers: self.providers.into_iter().map(join).collect::<io::Result<_>>()?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loopback_delivers_messages() {
        let cfg = LoopbackConfig {
            shape: NetworkShape { layers: 2, per_layer: 1, providers: 2, clients: 2 },
            rates: Rates { lambda_p: 20.0, lambda_l: 5.0, lambda_d: 5.0, lambda_m: 5.0, mu: 50.0 },
            pull_period_s: 0.2,
            seed: 1,
            messages: vec![(0, 1, b"hello".to_vec()), (1, 0, b"hi back".to_vec())],
        };
        let dep = deploy_loopback(&cfg).unwrap();
        std::thread::sleep(Duration::from_millis(1500));
        let report = dep.shutdown().unwrap();
        assert_eq!(report.clients[1].received, vec![b"hello".to_vec()]);
        assert_eq!(report.clients[0].received, vec![b"hi back".to_vec()]);
        assert!(report.clients.iter().all(|c| c.counters.loops_returned > 0));
        assert!(report.mixes.iter().all(|m| m.metrics.loops_returned > 0 && m.metrics.dropped_mac == 0));
        let len = report.clients[0].wire[0].len;
        assert!(report.clients.iter().flat_map(|c| &c.wire).all(|w| w.len == len));
    }
}

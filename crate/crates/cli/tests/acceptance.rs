//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::collections::HashMap;
use std::panic::AssertUnwindSafe;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::sync::Arc;
use std::time::{Duration, Instant};

use parking_lot::Mutex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use annolab_core::domain::{
    validate_transition, BlobRef, Clock, DatasetFormat, FakeClock, Job, JobEvent, JobId, JobStatus, Lease, ModelId,
    ModelStatus, Role, TaskKind, UserId, Visibility,
};
use annolab_core::plugins::diarize::{
    diarize, Annotation, DiarizeConfig, DiarizeInput, EmbeddingWindow, SpectralEmbedder,
};
use annolab_core::plugins::postcorrect::synth::{CorpusSpec, SyntheticCorpus};
use annolab_core::plugins::postcorrect::{cer, train, MicroCer, PagePair, PostCorrectorModel, TrainConfig};
use annolab_core::plugins::NeverCancel;
use annolab_core::queue::{Completion, LeaseClaim, NoPersistence, TaskQueue};
use annolab_service::wire::{CreateUserRequest, PredictRequest};
use annolab_service::{ApiClient, ClientError};

type Check = Result<String, String>;

fn main() {
    let checks: Vec<(&str, Duration, fn() -> Check)> = vec![
        ("post-correction case study, 5 seeds", Duration::from_secs(60), postcorrect_case_study),
        ("decoder equals exhaustive argmax", Duration::from_secs(120), decoder_optimality),
        ("cer matches quadratic edit distance", Duration::from_secs(30), cer_oracle),
        ("diarization window accuracy", Duration::from_secs(5), diarization_accuracy),
        ("queue safety under worker crashes", Duration::from_secs(30), queue_stress),
        ("end-to-end REST loop", Duration::from_secs(90), || rest_loop(false)),
        ("job state machine fuzz", Duration::from_secs(60), state_machine_fuzz),
        ("durability across serve kills", Duration::from_secs(300), || rest_loop(true)),
    ];
    let mut failed = 0;
    for (name, limit, check) in checks {
        let t = Instant::now();
        let result = std::panic::catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|p| Err(format!("panicked: {}", panic_message(&p))));
        let elapsed = t.elapsed();
        let result = match result {
            Ok(detail) if elapsed > limit => Err(format!("{detail}; took {elapsed:.1?}, limit {limit:?}")),
            other => other,
        };
        match result {
            Ok(detail) => println!("PASS  {name}: {detail} [{:.1}s]", elapsed.as_secs_f64()),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why} [{:.1}s]", elapsed.as_secs_f64());
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance check(s) failed");
        std::process::exit(1);
    }
}

fn panic_message(p: &Box<dyn std::any::Any + Send>) -> String {
    p.downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| p.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "unknown panic".into())
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

/// Textbook Levenshtein recurrence, kept separate from the library's version.
fn dp_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut row = vec![0usize; b.len() + 1];
    for i in 1..=a.len() {
        row[0] = i;
        for j in 1..=b.len() {
            let sub = prev[j - 1] + usize::from(a[i - 1] != b[j - 1]);
            row[j] = sub.min(prev[j] + 1).min(row[j - 1] + 1);
        }
        std::mem::swap(&mut prev, &mut row);
    }
    prev[b.len()]
}

fn micro_cer(pairs: &[(String, String)]) -> f64 {
    let errors: usize = pairs.iter().map(|(h, r)| dp_distance(h, r)).sum();
    let chars: usize = pairs.iter().map(|(_, r)| r.chars().count()).sum();
    errors as f64 / chars as f64
}

// ---- post-correction ----

const CASE_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

fn postcorrect_case_study() -> Check {
    let mut summary = Vec::new();
    for seed in CASE_SEEDS {
        let mut corpus = SyntheticCorpus::new(seed, CorpusSpec::default());
        let train_pages = corpus.pages(10);
        let held_out = corpus.pages(10);
        let (model, _) = train(&train_pages, TrainConfig::default()).map_err(|e| e.to_string())?;
        let before: Vec<(String, String)> = held_out.iter().map(|p| (p.source.clone(), p.target.clone())).collect();
        let after: Vec<(String, String)> = held_out
            .iter()
            .map(|p| (model.correct_page(&p.source), p.target.clone()))
            .collect();
        let (b, a) = (micro_cer(&before), micro_cer(&after));
        let (mut lib_before, mut lib_after) = (MicroCer::default(), MicroCer::default());
        for ((src, r), (hyp, _)) in before.iter().zip(&after) {
            lib_before.add(src, r);
            lib_after.add(hyp, r);
        }
        let lib = (
            lib_before.value().map_err(|e| e.to_string())?,
            lib_after.value().map_err(|e| e.to_string())?,
        );
        ensure((lib.0 - b).abs() < 1e-12 && (lib.1 - a).abs() < 1e-12, || {
            format!("seed {seed}: library CER {lib:?} disagrees with oracle ({b}, {a})")
        })?;
        let rel = 1.0 - a / b;
        ensure(rel >= 0.5, || {
            format!("seed {seed}: CER {:.2}% -> {:.2}%, relative reduction {rel:.3} < 0.5", b * 100.0, a * 100.0)
        })?;
        summary.push(format!("{:.1}%->{:.1}%", b * 100.0, a * 100.0));
    }
    Ok(format!("micro CER {}", summary.join(", ")))
}

// ---- decoder optimality ----

struct Best {
    score: f64,
    output: String,
}

fn offer(best: &mut Option<Best>, score: f64, output: &str) {
    let better = match best {
        None => true,
        Some(b) => score > b.score || (score == b.score && output < b.output.as_str()),
    };
    if better {
        *best = Some(Best {
            score,
            output: output.to_owned(),
        });
    }
}

fn last_two(out: &[char]) -> (Option<char>, Option<char>) {
    let n = out.len();
    (n.checked_sub(2).map(|i| out[i]), n.checked_sub(1).map(|i| out[i]))
}

/// Walks every monotone edit path and keeps the best full score.
fn enumerate(
    model: &PostCorrectorModel,
    obs: &[char],
    pos: usize,
    out: &mut Vec<char>,
    just_inserted: bool,
    score: f64,
    best: &mut Option<Best>,
) {
    let (h1, h2) = last_two(out);
    if !just_inserted {
        for &t in model.insertable() {
            out.push(t);
            enumerate(model, obs, pos, out, true, score + model.insert_score(t, h1, h2), best);
            out.pop();
        }
    }
    let Some(&o) = obs.get(pos) else {
        let s: String = out.iter().collect();
        offer(best, score + model.end_score(h1, h2), &s);
        return;
    };
    let cands: Vec<char> = model.candidates(o).collect();
    for t in cands {
        out.push(t);
        enumerate(model, obs, pos + 1, out, false, score + model.emit_score(o, t, h1, h2), best);
        out.pop();
    }
    if model.can_skip(o) {
        enumerate(model, obs, pos + 1, out, false, score + model.skip_score(o), best);
    }
}

fn brute_force(model: &PostCorrectorModel, line: &str) -> String {
    let obs: Vec<char> = line.chars().collect();
    let mut best = None;
    enumerate(model, &obs, 0, &mut Vec::new(), false, 0.0, &mut best);
    best.expect("the copy path always exists").output
}

fn all_strings(alphabet: &[char], max_len: usize) -> Vec<String> {
    let mut out = vec![String::new()];
    let mut frontier = vec![String::new()];
    for _ in 0..max_len {
        let next: Vec<String> = frontier
            .iter()
            .flat_map(|s| alphabet.iter().map(move |&c| format!("{s}{c}")))
            .collect();
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

fn decoder_models() -> Result<Vec<PostCorrectorModel>, String> {
    let mut pairs = Vec::new();
    for _ in 0..3 {
        pairs.push(PagePair::new("cb", "ab"));
        pairs.push(PagePair::new("abbc", "abc"));
        pairs.push(PagePair::new("ac", "abc"));
        pairs.push(PagePair::new("bca", "bca"));
    }
    pairs.push(PagePair::new("ba", "bc"));
    pairs.push(PagePair::new("ba", "bc"));
    pairs.push(PagePair::new("aac", "ac"));
    pairs.push(PagePair::new("aac", "ac"));
    let mut models = Vec::new();
    for (lm_weight, min_count) in [(1.0, 2), (0.5, 1), (2.0, 2), (0.0, 1)] {
        let cfg = TrainConfig {
            lm_weight,
            min_count,
            beam: 10_000,
            ..TrainConfig::default()
        };
        models.push(train(&pairs, cfg).map_err(|e| e.to_string())?.0);
    }
    Ok(models)
}

fn decoder_optimality() -> Check {
    let models = decoder_models()?;
    ensure(models.iter().any(|m| !m.insertable().is_empty()), || "no model restores characters".into())?;
    ensure(models.iter().any(|m| !m.inventory().skips.is_empty()), || "no model drops characters".into())?;
    // every alphabet of at most 3 symbols is a subset of {a, b, c}
    let inputs = all_strings(&['a', 'b', 'c'], 5);
    let mut compared = 0;
    let mut mismatches = Vec::new();
    for (mi, model) in models.iter().enumerate() {
        for input in &inputs {
            compared += 1;
            let got = model.decode(input);
            let want = brute_force(model, input);
            if got != want {
                mismatches.push(format!("model {mi} {input:?}: {got:?} vs {want:?}"));
            }
        }
    }
    ensure(mismatches.is_empty(), || {
        format!("{} mismatches, first {}", mismatches.len(), mismatches[0])
    })?;
    Ok(format!("{compared} decodes, 0 mismatches"))
}

// ---- CER ----

fn cer_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let alphabet = ['a', 'b', 'c', 'd', 'é', ' '];
    let random = |rng: &mut ChaCha8Rng, min: usize| -> String {
        let n = rng.random_range(min..=8);
        (0..n).map(|_| alphabet[rng.random_range(0..alphabet.len())]).collect()
    };
    for i in 0..1000 {
        let reference = random(&mut rng, 1);
        let hyp = random(&mut rng, 0);
        let value = cer(&hyp, &reference).map_err(|e| e.to_string())?;
        let n = reference.chars().count();
        let want = dp_distance(&hyp, &reference);
        ensure(value * n as f64 == want as f64, || {
            format!("pair {i} ({hyp:?}, {reference:?}): cer*len = {} but distance = {want}", value * n as f64)
        })?;
    }
    Ok("1000 pairs, all exact".into())
}

// ---- diarization ----

const DIM: usize = 16;
const DIAR_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

fn unit(i: usize) -> Vec<f64> {
    let mut v = vec![0.0; DIM];
    v[i] = 1.0;
    v
}

/// 40 windows with a 0.5 s hop: speaker A for the first 20, B for the rest.
fn speaker_windows(noise: Option<(&mut ChaCha8Rng, f64)>) -> (Vec<EmbeddingWindow>, Vec<&'static str>) {
    let mut noise = noise.map(|(rng, sigma)| (rng, Normal::new(0.0, sigma).expect("valid sigma")));
    let mut windows = Vec::new();
    let mut truth = Vec::new();
    for i in 0..40 {
        let speaker = if i < 20 { 0 } else { 1 };
        let mut vec = unit(speaker);
        if let Some((rng, normal)) = noise.as_mut() {
            for x in vec.iter_mut() {
                *x += normal.sample(&mut **rng);
            }
        }
        windows.push(EmbeddingWindow {
            start_s: i as f64 * 0.5,
            end_s: i as f64 * 0.5 + 1.0,
            vec,
        });
        truth.push(["A", "B"][speaker]);
    }
    (windows, truth)
}

/// Two enrollment windows per speaker: windows 0-1 for A and 38-39 for B.
fn enrollment() -> Vec<Annotation> {
    vec![
        Annotation {
            speaker: "A".into(),
            start: 0.25,
            end: 1.25,
        },
        Annotation {
            speaker: "B".into(),
            start: 19.25,
            end: 20.25,
        },
    ]
}

/// Share of windows whose start falls in a segment with the true label.
/// Segment edges sit on window starts, so the start identifies the window.
fn window_accuracy(windows: &[EmbeddingWindow], truth: &[&str]) -> Result<f64, String> {
    let out = diarize(
        DiarizeInput::Windows(windows.to_vec()),
        &enrollment(),
        &[],
        &DiarizeConfig::default(),
        &SpectralEmbedder::default(),
        &NeverCancel,
    )
    .map_err(|e| e.to_string())?;
    ensure(out.profiles.len() == 2, || format!("expected 2 profiles, got {}", out.profiles.len()))?;
    let correct = windows
        .iter()
        .zip(truth)
        .filter(|(w, t)| {
            out.segments
                .iter()
                .find(|s| s.start_s <= w.start_s && w.start_s < s.end_s)
                .is_some_and(|s| s.label == **t)
        })
        .count();
    Ok(correct as f64 / windows.len() as f64)
}

fn diarization_accuracy() -> Check {
    let (windows, truth) = speaker_windows(None);
    let clean = window_accuracy(&windows, &truth)?;
    ensure(clean == 1.0, || format!("orthogonal fixture accuracy {clean}"))?;
    let mut noisy = Vec::new();
    for seed in DIAR_SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (windows, truth) = speaker_windows(Some((&mut rng, 0.3)));
        let acc = window_accuracy(&windows, &truth)?;
        ensure(acc >= 0.9, || format!("noisy fixture seed {seed}: accuracy {acc:.3} < 0.9"))?;
        noisy.push(format!("{:.0}%", acc * 100.0));
    }
    Ok(format!("orthogonal 100%, noisy {}", noisy.join(" ")))
}

// ---- queue stress ----

fn queue_stress() -> Check {
    const JOBS: usize = 200;
    const WORKERS: usize = 8;
    let clock = FakeClock::new(1_000_000);
    let queue = Arc::new(TaskQueue::new(1_000, Box::new(NoPersistence)));
    for i in 0..JOBS {
        let job = Job::new(
            JobId(format!("job-{i:04}")),
            UserId::from("usr-stress"),
            TaskKind::Predict,
            "stub",
            "run",
            "cpu",
            1_000_000 + i as u64,
        );
        queue.enqueue(job).map_err(|e| e.to_string())?;
    }
    let lease_log: Arc<Mutex<Vec<JobId>>> = Arc::default();
    let successes: Arc<Mutex<HashMap<JobId, usize>>> = Arc::default();
    let crashes = Arc::new(Mutex::new(Vec::<(JobId, LeaseClaim, u64)>::new()));
    let zombie_wins = Arc::new(Mutex::new(0usize));

    let handles: Vec<_> = (0..WORKERS)
        .map(|w| {
            let (queue, clock) = (queue.clone(), clock.clone());
            let (lease_log, successes, crashes, zombie_wins) =
                (lease_log.clone(), successes.clone(), crashes.clone(), zombie_wins.clone());
            std::thread::spawn(move || -> Result<(), String> {
                let mut rng = ChaCha8Rng::seed_from_u64(1000 + w as u64);
                let worker = format!("w{w}");
                loop {
                    let leased = {
                        let mut log = lease_log.lock();
                        let r = queue.lease_any(&["cpu"], &worker, clock.now()).map_err(|e| e.to_string())?;
                        if let Some(j) = &r {
                            log.push(j.job_id.clone());
                        }
                        r
                    };
                    let Some(job) = leased else {
                        if queue.jobs().iter().all(|j| j.status.is_terminal()) {
                            return Ok(());
                        }
                        clock.advance(250);
                        queue.expire_leases(clock.now());
                        // crashed workers wake up after their lease ran out and try to finish
                        for (id, claim, deadline) in crashes.lock().iter() {
                            if clock.now() <= *deadline {
                                continue;
                            }
                            let blob = BlobRef {
                                blob_id: "zombie".into(),
                                size: 0,
                            };
                            if queue.complete(id, claim, Completion::Ok(Some(blob)), clock.now()).is_ok() {
                                *zombie_wins.lock() += 1;
                            }
                        }
                        std::thread::yield_now();
                        continue;
                    };
                    let lease = job.lease.as_ref().expect("running job has a lease");
                    let claim = LeaseClaim::of(lease);
                    if rng.random_bool(0.1) {
                        crashes.lock().push((job.job_id.clone(), claim, lease.deadline));
                        continue;
                    }
                    let _ = queue.heartbeat(&job.job_id, &claim, clock.now());
                    let blob = BlobRef {
                        blob_id: job.job_id.to_string(),
                        size: 0,
                    };
                    if let Ok(done) = queue.complete(&job.job_id, &claim, Completion::Ok(Some(blob)), clock.now()) {
                        if done.status != JobStatus::Succeeded {
                            return Err(format!("completion of {} left it {}", job.job_id, done.status));
                        }
                        *successes.lock().entry(job.job_id.clone()).or_default() += 1;
                    }
                }
            })
        })
        .collect();
    for h in handles {
        h.join().map_err(|p| panic_message(&p))??;
    }

    let jobs = queue.jobs();
    ensure(jobs.iter().all(|j| j.status.is_terminal()), || "non-terminal jobs left".into())?;
    let successes = successes.lock();
    for j in &jobs {
        let n = successes.get(&j.job_id).copied().unwrap_or(0);
        let want = usize::from(j.status == JobStatus::Succeeded);
        ensure(n == want, || format!("{} is {} with {n} successful completions", j.job_id, j.status))?;
        if j.status == JobStatus::Succeeded {
            let blob = j.result.as_ref().map(|b| b.blob_id.as_str());
            ensure(blob == Some(j.job_id.as_str()), || format!("{} holds result {blob:?}", j.job_id))?;
        }
    }
    ensure(*zombie_wins.lock() == 0, || format!("{} stale completions accepted", zombie_wins.lock()))?;

    let log = lease_log.lock();
    let mut leases: HashMap<&JobId, usize> = HashMap::new();
    for id in log.iter() {
        *leases.entry(id).or_default() += 1;
    }
    let mut seen = std::collections::HashSet::new();
    let crash_free: Vec<&JobId> = log.iter().filter(|id| leases[id] == 1 && seen.insert(*id)).collect();
    ensure(crash_free.windows(2).all(|w| w[0] < w[1]), || "crash-free jobs leased out of FIFO order".into())?;
    let succeeded = jobs.iter().filter(|j| j.status == JobStatus::Succeeded).count();
    Ok(format!(
        "{succeeded}/{JOBS} succeeded, {} failed, {} crashes, {} crash-free in FIFO order",
        JOBS - succeeded,
        crashes.lock().len(),
        crash_free.len()
    ))
}

// ---- state machine fuzz ----

#[derive(Debug, Clone, Copy, PartialEq)]
struct Shadow {
    status: JobStatus,
    attempt: u32,
    cancel_requested: bool,
}

/// The lifecycle table written out independently. `None` means rejected.
fn shadow_step(s: Shadow, event: &JobEvent, max: u32) -> Option<Shadow> {
    use JobStatus::*;
    let retry = |s: Shadow| {
        if s.cancel_requested {
            Shadow { status: Cancelled, ..s }
        } else if s.attempt < max {
            Shadow {
                status: Queued,
                attempt: s.attempt + 1,
                ..s
            }
        } else {
            Shadow { status: Failed, ..s }
        }
    };
    Some(match (s.status, event) {
        (Queued, JobEvent::LeaseGranted(_)) => Shadow { status: Running, ..s },
        (Running, JobEvent::CompletedOk { .. }) => Shadow { status: Succeeded, ..s },
        (Running, JobEvent::CompletedErr { .. }) | (Running, JobEvent::LeaseExpired) => retry(s),
        (Queued, JobEvent::Cancel) => Shadow { status: Cancelled, ..s },
        (Running, JobEvent::Cancel) => Shadow {
            cancel_requested: true,
            ..s
        },
        (Running, JobEvent::CancelAcknowledged) => Shadow { status: Cancelled, ..s },
        (Failed, JobEvent::Restart { .. }) | (Cancelled, JobEvent::Restart { .. }) => Shadow {
            status: Queued,
            attempt: 1,
            cancel_requested: false,
        },
        _ => return None,
    })
}

fn random_event(rng: &mut ChaCha8Rng, token: &mut u64) -> JobEvent {
    match rng.random_range(0..7) {
        0 => {
            *token += 1;
            JobEvent::LeaseGranted(Lease {
                worker_id: "w".into(),
                deadline: 1_000,
                fencing_token: *token,
            })
        }
        1 => JobEvent::CompletedOk { result: None },
        2 => JobEvent::CompletedErr { reason: "e".into() },
        3 => JobEvent::LeaseExpired,
        4 => JobEvent::Cancel,
        5 => JobEvent::CancelAcknowledged,
        _ => JobEvent::Restart { at: 7 },
    }
}

fn state_machine_fuzz() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let (mut applied, mut rejected) = (0usize, 0usize);
    for seq in 0..10_000 {
        let mut job = Job::new(JobId(format!("j{seq}")), UserId::from("u"), TaskKind::Train, "p", "t", "c", 0);
        let mut shadow = Shadow {
            status: JobStatus::Queued,
            attempt: 1,
            cancel_requested: false,
        };
        let mut token = 0;
        let len = rng.random_range(1..=40);
        for step in 0..len {
            let event = random_event(&mut rng, &mut token);
            let predicted = validate_transition(&job, &event);
            let expected = shadow_step(shadow, &event, job.max_attempts);
            let result = job.apply(event.clone());
            ensure(predicted == result, || format!("seq {seq} step {step}: validate and apply disagree"))?;
            match (result, expected) {
                (Ok(next), Some(exp)) => {
                    applied += 1;
                    ensure(next == exp.status, || {
                        format!("seq {seq} step {step}: {} went to {next}, table says {}", event.name(), exp.status)
                    })?;
                    shadow = exp;
                }
                (Err(e), None) => {
                    rejected += 1;
                    ensure(e.status == shadow.status && e.event == event.name(), || {
                        format!("seq {seq} step {step}: rejection names {} / {}", e.status, e.event)
                    })?;
                }
                (got, exp) => {
                    return Err(format!(
                        "seq {seq} step {step}: {} from {}: got {got:?}, table says {exp:?}",
                        event.name(),
                        shadow.status
                    ))
                }
            }
            let now = Shadow {
                status: job.status,
                attempt: job.attempt,
                cancel_requested: job.cancel_requested,
            };
            ensure(now == shadow, || format!("seq {seq} step {step}: job {now:?} vs table {shadow:?}"))?;
            job.check_invariants()
                .map_err(|e| format!("seq {seq} step {step}: invariant violated: {e}"))?;
        }
    }
    Ok(format!("10000 sequences, {applied} transitions applied, {rejected} rejected"))
}

// ---- REST loop ----

const BIN: &str = env!("CARGO_BIN_EXE_annolab");
const ADMIN: (&str, &str) = ("admin", "admin-pw");

struct Serve {
    child: Child,
    url: String,
}

impl Serve {
    fn kill(mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

impl Drop for Serve {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

fn free_port() -> u16 {
    std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

async fn spawn_serve(data_dir: &Path) -> Result<Serve, String> {
    let addr = format!("127.0.0.1:{}", free_port());
    let child = Command::new(BIN)
        .args(["serve", "--data-dir"])
        .arg(data_dir)
        .args(["--addr", &addr, "--inline-worker", "--lease-ms", "3000"])
        .args(["--bootstrap-admin", &format!("{}:{}", ADMIN.0, ADMIN.1)])
        .env("ANNOLAB_LOG", "warn")
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .map_err(|e| format!("cannot start serve: {e}"))?;
    let mut serve = Serve {
        child,
        url: format!("http://{addr}"),
    };
    let probe = ApiClient::new(&serve.url, None);
    let deadline = Instant::now() + Duration::from_secs(20);
    loop {
        if probe.meta().await.is_ok() {
            return Ok(serve);
        }
        if let Ok(Some(status)) = serve.child.try_wait() {
            return Err(format!("serve exited early with {status}"));
        }
        if Instant::now() > deadline {
            return Err("serve did not come up".into());
        }
        tokio::time::sleep(Duration::from_millis(50)).await;
    }
}

fn api<T>(what: &str, r: Result<T, ClientError>) -> Result<T, String> {
    r.map_err(|e| format!("{what}: {e}"))
}

fn expect_404<T: std::fmt::Debug>(what: &str, r: Result<T, ClientError>) -> Result<(), String> {
    match r {
        Err(e) if e.status() == Some(404) => Ok(()),
        Err(e) => Err(format!("{what}: expected 404, got {e}")),
        Ok(v) => Err(format!("{what}: expected 404, got {v:?}")),
    }
}

async fn wait_job(c: &ApiClient, id: &str) -> Result<Job, String> {
    let r = tokio::time::timeout(Duration::from_secs(60), c.wait_job(id, Duration::from_millis(100))).await;
    api("wait job", r.map_err(|_| format!("job {id} did not finish"))?)
}

#[derive(Default)]
struct Progress {
    step: usize,
    alice: String,
    bob: String,
    dataset: String,
    model: String,
    train_job: String,
    predict_job: String,
    result: Vec<u8>,
    bob_job: String,
    cer: (f64, f64),
}

/// Checks everything earlier steps left behind.
async fn verify(url: &str, p: &Progress) -> Result<(), String> {
    let alice = ApiClient::new(url, Some(p.alice.clone()));
    let bob = ApiClient::new(url, Some(p.bob.clone()));
    if p.step >= 1 {
        api("alice token", alice.me().await)?;
        api("bob token", bob.me().await)?;
    }
    if p.step >= 7 {
        expect_404("deleted model", alice.model(&p.model).await)?;
        expect_404("deleted model for bob", bob.model(&p.model).await)?;
        expect_404("train job", alice.job(&p.train_job).await)?;
        expect_404("predict job", alice.job(&p.predict_job).await)?;
        expect_404("train logs", alice.logs(&p.train_job, 0).await)?;
        expect_404("training data", alice.dataset(&p.dataset).await)?;
        return Ok(());
    }
    if p.step >= 2 {
        let ds = api("dataset", alice.dataset(&p.dataset).await)?;
        ensure(ds.item_count == 10, || format!("dataset has {} items", ds.item_count))?;
    }
    if p.step >= 3 {
        let m = api("model", alice.model(&p.model).await)?;
        ensure(m.model.status == ModelStatus::Ready, || format!("model is {:?}", m.model.status))?;
        let j = api("train job", alice.job(&p.train_job).await)?;
        ensure(j.status == JobStatus::Succeeded, || format!("train job is {}", j.status))?;
        let logs = api("train logs", alice.logs(&p.train_job, 0).await)?;
        ensure(logs.finished && logs.next_offset > 0, || "train log missing".into())?;
    }
    if p.step >= 4 {
        let bytes = api("result", alice.result(&p.predict_job).await)?;
        ensure(bytes == p.result, || "prediction result changed".into())?;
    }
    if p.step >= 5 {
        let m = api("shared model", bob.model(&p.model).await)?;
        ensure(m.model.visibility == Visibility::Public, || "model is not public".into())?;
    }
    if p.step >= 6 {
        let j = api("bob job", bob.job(&p.bob_job).await)?;
        ensure(j.status == JobStatus::Succeeded, || format!("bob's job is {}", j.status))?;
        expect_404("bob reads training data", bob.dataset(&p.dataset).await)?;
        expect_404("bob reads train logs", bob.logs(&p.train_job, 0).await)?;
    }
    Ok(())
}

fn rest_loop(restart_between_steps: bool) -> Check {
    let rt = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    rt.block_on(rest_loop_async(restart_between_steps))
}

async fn rest_loop_async(restart: bool) -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data_dir: PathBuf = dir.path().join("data");
    let mut serve = spawn_serve(&data_dir).await?;
    let mut p = Progress::default();
    let mut restarts = 0;
    let mut corpus = SyntheticCorpus::new(7, CorpusSpec::default());
    let pages = corpus.pages(10);
    let held_out = corpus.pair();

    for step in 1..=7 {
        let url = serve.url.clone();
        let alice = ApiClient::new(&url, Some(p.alice.clone()));
        let bob = ApiClient::new(&url, Some(p.bob.clone()));
        match step {
            1 => {
                let anon = ApiClient::new(&url, None);
                let admin = anon.with_token(api("admin login", anon.login(ADMIN.0, ADMIN.1).await)?.token);
                for name in ["alice", "bob"] {
                    let req = CreateUserRequest {
                        username: name.into(),
                        password: format!("{name}-pw"),
                        display_name: None,
                        role: Some(Role::User),
                    };
                    api("create user", admin.create_user(&req).await)?;
                }
                p.alice = api("login", anon.login("alice", "alice-pw").await)?.token;
                p.bob = api("login", anon.login("bob", "bob-pw").await)?.token;
            }
            2 => {
                let jsonl: String = pages
                    .iter()
                    .map(|pg| serde_json::json!({"source": pg.source, "target": pg.target}).to_string() + "\n")
                    .collect();
                let ds = api(
                    "upload",
                    alice.upload_dataset(DatasetFormat::TextPairsJsonl, "train", jsonl.into_bytes()).await,
                )?;
                p.dataset = ds.dataset_id.to_string();
            }
            3 => {
                let ft = api(
                    "finetune",
                    alice
                        .finetune("mdl-base-postcorrect", &annolab_core::domain::DatasetId(p.dataset.clone()), serde_json::Value::Null)
                        .await,
                )?;
                p.model = ft.new_model_id.to_string();
                p.train_job = ft.job_id.to_string();
                if restart {
                    // also kill while the fine-tune is queued or running
                    serve.kill();
                    restarts += 1;
                    serve = spawn_serve(&data_dir).await?;
                }
                let alice = ApiClient::new(&serve.url, Some(p.alice.clone()));
                let r = tokio::time::timeout(
                    Duration::from_secs(60),
                    alice.wait_model(&ModelId(p.model.clone()), Duration::from_millis(100)),
                )
                .await
                .map_err(|_| "model did not finish training".to_string())?;
                let m = api("wait model", r)?;
                ensure(m.model.status == ModelStatus::Ready, || format!("fine-tune ended {:?}", m.model.status))?;
            }
            4 => {
                let req = PredictRequest {
                    inline_input: Some(held_out.source.clone()),
                    ..Default::default()
                };
                let job = api("predict", alice.predict(&p.model, &req).await)?.job_id.to_string();
                let done = wait_job(&alice, &job).await?;
                ensure(done.status == JobStatus::Succeeded, || format!("prediction {}", done.status))?;
                let bytes = api("result", alice.result(&job).await)?;
                let corrected = String::from_utf8(bytes.clone()).map_err(|e| e.to_string())?;
                let before = dp_distance(&held_out.source, &held_out.target) as f64;
                let after = dp_distance(&corrected, &held_out.target) as f64;
                let n = held_out.target.chars().count() as f64;
                p.cer = (before / n, after / n);
                ensure(after <= 0.5 * before, || {
                    format!("CER {:.2}% -> {:.2}% is less than a 50% reduction", p.cer.0 * 100.0, p.cer.1 * 100.0)
                })?;
                p.predict_job = job;
                p.result = bytes;
            }
            5 => {
                api("share", alice.set_visibility(&p.model, Visibility::Public).await)?;
            }
            6 => {
                let req = PredictRequest {
                    inline_input: Some(held_out.source.clone()),
                    ..Default::default()
                };
                let job = api("bob predict", bob.predict(&p.model, &req).await)?.job_id.to_string();
                let done = wait_job(&bob, &job).await?;
                ensure(done.status == JobStatus::Succeeded, || format!("bob's prediction {}", done.status))?;
                api("bob result", bob.result(&job).await)?;
                p.bob_job = job;
            }
            _ => {
                api("delete", alice.delete_model(&p.model).await)?;
            }
        }
        p.step = step;
        if restart {
            serve.kill();
            restarts += 1;
            serve = spawn_serve(&data_dir).await?;
        }
        verify(&serve.url, &p).await.map_err(|e| format!("after step {step}: {e}"))?;
    }
    serve.kill();
    let cer = format!("held-out CER {:.1}% -> {:.1}%", p.cer.0 * 100.0, p.cer.1 * 100.0);
    if restart {
        Ok(format!("7 steps, {restarts} kill/restart cycles, all state intact; {cer}"))
    } else {
        Ok(format!("7 steps; {cer}"))
    }
}

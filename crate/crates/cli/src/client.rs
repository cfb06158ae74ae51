use std::io::{BufRead, Write};
use std::path::PathBuf;
use std::time::Duration;

use base64::Engine;
use clap::Subcommand;
use serde::Serialize;

use annolab_core::domain::{DatasetFormat, DatasetId, JobStatus, ModelStatus, Role, Visibility};
use annolab_service::wire::{CreateUserRequest, PredictRequest};
use annolab_service::{ApiClient, ClientError};

use crate::{ClientArgs, EXIT_ERROR, EXIT_JOB_FAILED, EXIT_OK, EXIT_USAGE};

const POLL: Duration = Duration::from_millis(250);

#[derive(Debug, Subcommand)]
pub enum ClientCommand {
    /// Exchange a username and password for a token (printed on stdout).
    Login {
        username: String,
        /// Read from ANNOLAB_PASSWORD or the first stdin line when omitted.
        #[arg(long, env = "ANNOLAB_PASSWORD", hide_env_values = true)]
        password: Option<String>,
    },
    /// Show the account behind the token.
    Whoami,
    /// Create an account (admin only).
    UserCreate {
        username: String,
        #[arg(long)]
        password: String,
        #[arg(long, default_value = "user", value_parser = parse_role)]
        role: Role,
        #[arg(long)]
        display_name: Option<String>,
    },
    /// List registered plugins.
    Plugins,
    /// List visible models.
    Models,
    /// Show one model with its lineage.
    Model { model: String },
    /// Run a prediction.
    Predict {
        #[arg(long)]
        model: String,
        /// Input file; `-` reads stdin.
        #[arg(long = "in", group = "source")]
        input: Option<PathBuf>,
        /// Inline text input.
        #[arg(long, group = "source")]
        text: Option<String>,
        /// Use one of your datasets as input.
        #[arg(long, group = "source")]
        dataset: Option<String>,
        /// JSON task parameters.
        #[arg(long)]
        params: Option<String>,
        /// Poll until done and write the result.
        #[arg(long)]
        wait: bool,
        #[arg(long, requires = "wait")]
        out: Option<PathBuf>,
    },
    /// Fine-tune a model on a dataset; prints the new model id.
    Finetune {
        #[arg(long)]
        model: String,
        #[arg(long)]
        dataset: String,
        #[arg(long)]
        params: Option<String>,
        /// Poll until the new model is ready or failed.
        #[arg(long)]
        wait: bool,
    },
    /// Upload a dataset file; prints the dataset id.
    DatasetUpload {
        /// text_pairs_jsonl, enrollment_json or embedding_windows_json.
        #[arg(long, value_parser = parse_format)]
        format: DatasetFormat,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value = "")]
        task_name: String,
    },
    /// List your datasets.
    Datasets,
    /// Delete one of your datasets.
    DatasetDelete { dataset: String },
    /// List your jobs.
    Jobs,
    /// Show one job.
    Job { job: String },
    /// Stream a job's log until it finishes.
    JobsTail {
        job: String,
        #[arg(long, default_value_t = 0)]
        from: u64,
    },
    /// Request cancellation.
    Cancel { job: String },
    /// Requeue a failed or cancelled job.
    Restart { job: String },
    /// Download a succeeded job's result.
    Result {
        job: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Make a model public (or private again).
    Share {
        model: String,
        #[arg(long)]
        private: bool,
    },
    /// Delete a model with its jobs, logs and training data.
    Delete { model: String },
    /// Queue counters.
    QueueStats,
}

fn parse_role(s: &str) -> Result<Role, String> {
    serde_json::from_value(serde_json::Value::String(s.to_owned())).map_err(|_| "expected user, admin or worker".into())
}

fn parse_format(s: &str) -> Result<DatasetFormat, String> {
    DatasetFormat::parse(s).ok_or_else(|| "expected text_pairs_jsonl, enrollment_json or embedding_windows_json".into())
}

enum Failure {
    Api(ClientError),
    Usage(String),
    Io(String),
    Job(String),
}

impl From<ClientError> for Failure {
    fn from(e: ClientError) -> Self {
        Failure::Api(e)
    }
}

type CmdResult = Result<(), Failure>;

pub async fn run(args: ClientArgs) -> u8 {
    let client = ApiClient::new(&args.server, args.token.clone());
    let out = Output { json: args.json };
    match dispatch(&client, &out, args.command).await {
        Ok(()) => EXIT_OK,
        Err(Failure::Api(e)) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
        Err(Failure::Io(msg)) => {
            eprintln!("error: {msg}");
            EXIT_ERROR
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(Failure::Job(msg)) => {
            eprintln!("{msg}");
            EXIT_JOB_FAILED
        }
    }
}

struct Output {
    json: bool,
}

impl Output {
    fn json<T: Serialize>(&self, value: &T) {
        println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
    }

    /// JSON in `--json` mode, otherwise the given human line.
    fn show<T: Serialize>(&self, value: &T, human: impl FnOnce() -> String) {
        if self.json {
            self.json(value);
        } else {
            println!("{}", human());
        }
    }
}

fn parse_params(raw: Option<String>) -> Result<serde_json::Value, Failure> {
    match raw {
        None => Ok(serde_json::Value::Null),
        Some(s) => serde_json::from_str(&s).map_err(|e| Failure::Usage(format!("--params is not JSON: {e}"))),
    }
}

fn read_input(path: &PathBuf) -> Result<Vec<u8>, Failure> {
    if path.as_os_str() == "-" {
        let mut buf = Vec::new();
        std::io::Read::read_to_end(&mut std::io::stdin(), &mut buf).map_err(|e| Failure::Io(e.to_string()))?;
        Ok(buf)
    } else {
        std::fs::read(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))
    }
}

fn write_output(path: Option<&PathBuf>, bytes: &[u8]) -> Result<(), Failure> {
    match path {
        Some(p) => std::fs::write(p, bytes).map_err(|e| Failure::Io(format!("{}: {e}", p.display()))),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(bytes).and_then(|_| stdout.flush()).map_err(|e| Failure::Io(e.to_string()))
        }
    }
}

fn job_failure(job: &annolab_core::domain::Job) -> Failure {
    let reason = job.failure_reason.as_deref().unwrap_or("no reason given");
    match job.status {
        JobStatus::Cancelled => Failure::Job(format!("job {} was cancelled", job.job_id)),
        _ => Failure::Job(format!("job {} failed: {reason}", job.job_id)),
    }
}

async fn dispatch(client: &ApiClient, out: &Output, cmd: ClientCommand) -> CmdResult {
    match cmd {
        ClientCommand::Login { username, password } => {
            let password = match password {
                Some(p) => p,
                None => {
                    let mut line = String::new();
                    std::io::stdin().lock().read_line(&mut line).map_err(|e| Failure::Io(e.to_string()))?;
                    line.trim_end_matches(['\r', '\n']).to_owned()
                }
            };
            let resp = client.login(&username, &password).await?;
            out.show(&resp, || resp.token.clone());
        }
        ClientCommand::Whoami => {
            let me = client.me().await?;
            out.show(&me, || format!("{}\t{}\t{:?}", me.user_id, me.username, me.role).to_lowercase());
        }
        ClientCommand::UserCreate {
            username,
            password,
            role,
            display_name,
        } => {
            let req = CreateUserRequest {
                username,
                password,
                display_name,
                role: Some(role),
            };
            let user = client.create_user(&req).await?;
            out.show(&user, || user.user_id.to_string());
        }
        ClientCommand::Plugins => {
            let resp = client.plugins().await?;
            out.show(&resp, || {
                let mut lines = Vec::new();
                for p in resp["plugins"].as_array().into_iter().flatten() {
                    for t in p["tasks"].as_array().into_iter().flatten() {
                        lines.push(format!(
                            "{}\t{}\t{}\t{}",
                            p["plugin_id"].as_str().unwrap_or(""),
                            t["task_name"].as_str().unwrap_or(""),
                            t["kind"].as_str().unwrap_or(""),
                            t["queue_class"].as_str().unwrap_or("")
                        ));
                    }
                }
                lines.join("\n")
            });
        }
        ClientCommand::Models => {
            let models = client.models().await?;
            out.show(&models, || {
                models
                    .iter()
                    .map(|v| {
                        let m = &v.model;
                        format!(
                            "{}\t{}\t{}\t{}/{}\t{}",
                            m.model_id,
                            status_name(m.status),
                            visibility_name(m.visibility),
                            m.plugin_id,
                            m.task_name,
                            m.parent_model_id.as_ref().map_or("-".to_owned(), |p| p.to_string())
                        )
                    })
                    .collect::<Vec<_>>()
                    .join("\n")
            });
        }
        ClientCommand::Model { model } => {
            let v = client.model(&model).await?;
            out.show(&v, || {
                let lineage: Vec<String> = v.lineage.iter().map(|m| m.to_string()).collect();
                format!(
                    "{}\t{}\t{}\t{}",
                    v.model.model_id,
                    status_name(v.model.status),
                    visibility_name(v.model.visibility),
                    lineage.join(" <- ")
                )
            });
        }
        ClientCommand::Predict {
            model,
            input,
            text,
            dataset,
            params,
            wait,
            out: out_file,
        } => {
            let mut req = PredictRequest {
                params: parse_params(params)?,
                ..Default::default()
            };
            match (input, text, dataset) {
                (Some(path), None, None) => {
                    let bytes = read_input(&path)?;
                    match String::from_utf8(bytes) {
                        Ok(s) => req.inline_input = Some(s),
                        Err(e) => req.input_b64 = Some(base64::engine::general_purpose::STANDARD.encode(e.into_bytes())),
                    }
                }
                (None, Some(t), None) => req.inline_input = Some(t),
                (None, None, Some(d)) => req.input_ref = Some(DatasetId(d)),
                _ => return Err(Failure::Usage("give one of --in, --text or --dataset".into())),
            }
            let created = client.predict(&model, &req).await?;
            if !wait {
                out.show(&created, || created.job_id.to_string());
                return Ok(());
            }
            let job = client.wait_job(created.job_id.as_str(), POLL).await?;
            if job.status != JobStatus::Succeeded {
                if out.json {
                    out.json(&job);
                }
                return Err(job_failure(&job));
            }
            let bytes = client.result(job.job_id.as_str()).await?;
            if out.json {
                if let Some(p) = &out_file {
                    write_output(Some(p), &bytes)?;
                }
                out.json(&job);
            } else {
                write_output(out_file.as_ref(), &bytes)?;
            }
        }
        ClientCommand::Finetune {
            model,
            dataset,
            params,
            wait,
        } => {
            let resp = client.finetune(&model, &DatasetId(dataset), parse_params(params)?).await?;
            if !wait {
                out.show(&resp, || resp.new_model_id.to_string());
                return Ok(());
            }
            eprintln!("training {} (job {})", resp.new_model_id, resp.job_id);
            let view = client.wait_model(&resp.new_model_id, POLL).await?;
            if view.model.status != ModelStatus::Ready {
                let job = client.job(resp.job_id.as_str()).await?;
                if out.json {
                    out.json(&view);
                }
                return Err(job_failure(&job));
            }
            out.show(&view, || resp.new_model_id.to_string());
        }
        ClientCommand::DatasetUpload {
            format,
            input,
            task_name,
        } => {
            let bytes = read_input(&input)?;
            let ds = client.upload_dataset(format, &task_name, bytes).await?;
            out.show(&ds, || ds.dataset_id.to_string());
        }
        ClientCommand::Datasets => {
            let list = client.datasets().await?;
            out.show(&list, || {
                list.iter()
                    .map(|d| format!("{}\t{}\t{}\t{}", d.dataset_id, d.format.as_str(), d.item_count, d.task_name))
                    .collect::<Vec<_>>()
                    .join("\n")
            });
        }
        ClientCommand::DatasetDelete { dataset } => {
            let resp = client.delete_dataset(&dataset).await?;
            out.show(&resp, || format!("deleted {dataset}"));
        }
        ClientCommand::Jobs => {
            let jobs = client.jobs().await?;
            out.show(&jobs, || jobs.iter().map(job_line).collect::<Vec<_>>().join("\n"));
        }
        ClientCommand::Job { job } => {
            let j = client.job(&job).await?;
            out.show(&j, || job_line(&j));
        }
        ClientCommand::JobsTail { job, from } => {
            let mut offset = from;
            loop {
                let chunk = client.logs(&job, offset).await?;
                if out.json {
                    println!("{}", serde_json::to_string(&chunk).expect("serializable"));
                } else {
                    let bytes = base64::engine::general_purpose::STANDARD
                        .decode(&chunk.payload_b64)
                        .map_err(|e| Failure::Io(format!("bad log payload: {e}")))?;
                    write_output(None, &bytes)?;
                }
                offset = chunk.next_offset;
                if chunk.finished {
                    break;
                }
                tokio::time::sleep(POLL).await;
            }
            let j = client.job(&job).await?;
            if j.status != JobStatus::Succeeded {
                return Err(job_failure(&j));
            }
        }
        ClientCommand::Cancel { job } => {
            let r = client.cancel(&job).await?;
            out.show(&r, || format!("{}\t{}", r.job_id, r.status));
        }
        ClientCommand::Restart { job } => {
            let r = client.restart(&job).await?;
            out.show(&r, || format!("{}\t{}", r.job_id, r.status));
        }
        ClientCommand::Result { job, out: out_file } => {
            let bytes = client.result(&job).await?;
            write_output(out_file.as_ref(), &bytes)?;
        }
        ClientCommand::Share { model, private } => {
            let vis = if private { Visibility::Private } else { Visibility::Public };
            let v = client.set_visibility(&model, vis).await?;
            out.show(&v, || format!("{}\t{}", v.model.model_id, visibility_name(v.model.visibility)));
        }
        ClientCommand::Delete { model } => {
            let resp = client.delete_model(&model).await?;
            out.show(&resp, || {
                resp["deleted"]
                    .as_array()
                    .into_iter()
                    .flatten()
                    .filter_map(|v| v.as_str())
                    .collect::<Vec<_>>()
                    .join("\n")
            });
        }
        ClientCommand::QueueStats => {
            let stats = client.queue_stats().await?;
            out.show(&stats, || {
                let mut lines: Vec<String> = stats
                    .by_class
                    .iter()
                    .map(|(class, c)| format!("{class}\tqueued={}\trunning={}", c.queued, c.running))
                    .collect();
                lines.push(format!("total\t{}", stats.total));
                lines.join("\n")
            });
        }
    }
    Ok(())
}

fn job_line(j: &annolab_core::domain::Job) -> String {
    format!(
        "{}\t{}\t{}/{}\tattempt {}/{}",
        j.job_id, j.status, j.plugin_id, j.task_name, j.attempt, j.max_attempts
    )
}

fn status_name(s: ModelStatus) -> String {
    serde_json::to_value(s).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default()
}

fn visibility_name(v: Visibility) -> String {
    serde_json::to_value(v).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default()
}

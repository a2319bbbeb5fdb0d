use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use preclin_core::animal_prior::PriorRecord;
use preclin_core::config::{fit_animal_prior, load_scenarios, StudyFile};
use preclin_core::dose_model::scenario_table;
use preclin_core::engine::{load_session, save_session, Recommendation, Trial, TrialStatus};
use preclin_core::inference::PosteriorSummary;
use preclin_core::sim::{parse_procedures, run_study, write_report, StudyConfig};

#[derive(Parser)]
#[command(name = "preclin", version, about = "Dose escalation with animal-informed robust mixture priors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Start a trial session from a study file.
    Init {
        /// Study file (TOML); defaults to the built-in dog/AUY922 study.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        session: PathBuf,
        /// Overwrite an existing session file.
        #[arg(long)]
        force: bool,
    },
    /// Print the dose recommended for the next cohort.
    Recommend {
        #[arg(long)]
        session: PathBuf,
    },
    /// Record a treated cohort.
    Record {
        #[arg(long)]
        session: PathBuf,
        /// Administered dose (mg/m²).
        #[arg(long)]
        dose: f64,
        /// Per-patient outcomes, 1 = DLT, e.g. `0,0,1`.
        #[arg(long, value_delimiter = ',')]
        outcomes: Vec<u8>,
        /// Accept a dose other than the recommended one.
        #[arg(long)]
        replay: bool,
    },
    /// Posterior summary and weight trace.
    Status {
        #[arg(long)]
        session: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Hypothetical summary after one more cohort; the session is not modified.
    Whatif {
        #[arg(long)]
        session: PathBuf,
        #[arg(long)]
        dose: f64,
        #[arg(long)]
        patients: Option<usize>,
        #[arg(long)]
        dlts: usize,
    },
    /// Selected MTD of a finished trial.
    Mtd {
        #[arg(long)]
        session: PathBuf,
    },
    /// Percentile-match the animal study and save the prior record.
    FitPrior {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Operating characteristics of procedures A-E.
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        /// File of `[[scenarios]]`; defaults to the study's scenarios, then the built-in table.
        #[arg(long)]
        scenarios: Option<PathBuf>,
        #[arg(long, default_value = "A,B,C,D,E")]
        procedures: String,
        #[arg(long, default_value_t = 1000)]
        reps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn study(config: Option<&Path>) -> Result<StudyFile> {
    match config {
        Some(p) => StudyFile::load(p).with_context(|| format!("reading {}", p.display())),
        None => Ok(StudyFile::dog_reference()),
    }
}

fn open(session: &Path) -> Result<Trial> {
    let state = load_session(session).with_context(|| format!("loading {}", session.display()))?;
    Ok(Trial::from_state(state, None)?)
}

fn recommendation_line(trial: &Trial) -> String {
    let grid = &trial.state.grid;
    match trial.state.status {
        TrialStatus::Enrolling => match trial.recommend_next() {
            Ok(Recommendation::Dose { dose_index }) => format!("next dose: {} mg/m²", grid.doses[dose_index]),
            _ => "next dose: none (stop)".into(),
        },
        TrialStatus::StoppedEarly => "trial stopped early for safety".into(),
        TrialStatus::Completed => "trial completed".into(),
    }
}

fn print_summary(s: &PosteriorSummary) {
    println!("{:>8} {:>8} {:>8} {:>8} {:>8} {:>8}", "dose", "median", "under", "target", "over", "p(DLT)");
    for i in 0..s.doses.len() {
        println!(
            "{:>8} {:>8.3} {:>8.3} {:>8.3} {:>8.3} {:>8.3}",
            s.doses[i], s.median[i], s.pr_under[i], s.pr_target[i], s.pr_over[i], s.pr_dlt[i]
        );
    }
    println!("posterior weight on animal component: {:.3}", s.posterior_weight);
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Init { config, session, force } => {
            if session.exists() && !force {
                bail!("{} exists; pass --force to overwrite", session.display());
            }
            let study = study(config.as_deref())?;
            let prior = study.resolve_prior()?;
            if let Some(fit) = &prior.fit {
                eprintln!("fitted animal prior (delta {:.5}, {} converged starts)", fit.delta, fit.converged_starts);
            }
            let model = study.build_model(&prior.params)?;
            let trial = Trial::new(model, study.trial.clone())?;
            save_session(&trial.state, &session)?;
            print_summary(&trial.summary());
            println!("{}", recommendation_line(&trial));
        }
        Command::Recommend { session } => {
            let trial = open(&session)?;
            println!("{}", recommendation_line(&trial));
        }
        Command::Record { session, dose, outcomes, replay } => {
            let mut trial = open(&session)?;
            let idx = trial.state.grid.index_of(dose).with_context(|| format!("{dose} mg/m² is not on the grid"))?;
            if let Some(bad) = outcomes.iter().find(|&&o| o > 1) {
                bail!("outcomes must be 0 or 1, got {bad}");
            }
            let outcomes: Vec<bool> = outcomes.iter().map(|&o| o == 1).collect();
            let entry = if replay { trial.replay_cohort(idx, outcomes)? } else { trial.record_cohort(idx, outcomes)? };
            save_session(&trial.state, &session)?;
            let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.3}"));
            println!(
                "cohort {}: kappa {} lambda {} weight {:.3} posterior weight {:.3}{}",
                entry.cohort,
                opt(entry.kappa),
                opt(entry.lambda),
                entry.weight,
                entry.posterior_weight,
                if entry.run_in { " (run-in)" } else { "" }
            );
            println!("{}", recommendation_line(&trial));
        }
        Command::Status { session, json } => {
            let trial = open(&session)?;
            let summary = trial.summary();
            if json {
                let out = serde_json::json!({
                    "status": trial.state.status,
                    "next_dose": trial.state.next_dose.map(|i| trial.state.grid.doses[i]),
                    "summary": summary,
                    "trace": trial.state.trace,
                });
                println!("{}", serde_json::to_string_pretty(&out)?);
            } else {
                println!("cohorts recorded: {} of {}", trial.state.history.len(), trial.state.config.max_cohorts);
                print_summary(&summary);
                print!("{}", trial.state.trace.to_csv());
                println!("{}", recommendation_line(&trial));
            }
        }
        Command::Whatif { session, dose, patients, dlts } => {
            let trial = open(&session)?;
            let idx = trial.state.grid.index_of(dose).with_context(|| format!("{dose} mg/m² is not on the grid"))?;
            let w = trial.whatif(idx, patients.unwrap_or(trial.state.config.cohort_size), dlts)?;
            println!("hypothetical (not recorded):");
            print_summary(&w.summary);
            if let Some(e) = w.entry {
                println!("weight {:.3}", e.weight);
            }
            match w.recommendation {
                Recommendation::Dose { dose_index } => println!("would recommend {} mg/m²", trial.state.grid.doses[dose_index]),
                Recommendation::Stop => println!("would stop"),
            }
        }
        Command::Mtd { session } => {
            let trial = open(&session)?;
            if trial.state.status == TrialStatus::Enrolling {
                bail!(
                    "the trial is still enrolling ({} of {} cohorts)",
                    trial.state.history.len(),
                    trial.state.config.max_cohorts
                );
            }
            match trial.select_mtd()? {
                Some(i) => println!("MTD: {} mg/m²", trial.state.grid.doses[i]),
                None if trial.state.status == TrialStatus::StoppedEarly => println!("no MTD: trial stopped early"),
                None => println!("no MTD: no administered dose meets the safety criterion"),
            }
        }
        Command::FitPrior { config, out } => {
            let study = study(Some(&config))?;
            let animal = study.animal.as_ref().context("the study file has no [animal] table")?;
            let fit = fit_animal_prior(animal, &study.grid, &study.fit_options())?;
            let rec = PriorRecord::from_fit(&fit);
            rec.save(&out)?;
            println!("{}", rec.to_json()?);
        }
        Command::Simulate { config, scenarios, procedures, reps, seed, threads, out } => {
            let study = study(config.as_deref())?;
            let scen = match scenarios {
                Some(p) => load_scenarios(&p, &study.grid)?,
                None if !study.scenarios.is_empty() => study.scenarios()?,
                None if study.grid.len() == 9 => scenario_table(),
                None => bail!("no scenarios: pass --scenarios or add [[scenarios]] to the study file"),
            };
            let procs = parse_procedures(&procedures)?;
            let prior = study.resolve_prior()?;
            let model = study.build_model(&prior.params)?;
            let cfg = StudyConfig {
                base: study.trial.clone(),
                utilities: study.trial.utilities,
                n_replicates: reps,
                seed,
                threads,
            };
            let oc = run_study(&model, &scen, &procs, &cfg)?;
            write_report(&oc, &out)?;
            println!("{:<14} {:>4} {:>8} {:>8}", "scenario", "proc", "PCS %", "stop %");
            for c in &oc.cells {
                println!("{:<14} {:>4} {:>8.1} {:>8.1}", c.scenario, c.procedure.label(), c.pcs(), c.pct_stopped_early());
            }
            println!("wrote oc.csv, alloc.csv, plotdata.json to {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

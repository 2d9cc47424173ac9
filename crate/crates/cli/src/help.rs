//! Config-key reference printed by `--help`.

pub const CONFIG_KEYS: &str = "\
CONFIG KEYS (JSON; unknown keys are rejected)
Override any of them with --set key=value, addressing array elements by
index (e.g. --set channels.0.noise_level=0.2). Values are parsed as JSON,
falling back to a plain string. Below, [i] marks an array index.

  schema_version                    config schema version (1)
  name                              scenario name, copied into summaries
  seed                              run seed; all randomness derives from it
  model.kind                        oscillator | hcv | hiv
  model.params.<name>               true model parameters:
      oscillator: alpha
      hcv: s r t_max d beta delta p c rho epsilon k t_end
      hiv: lambda1 lambda2 d1 d2 k1 k2 m1 m2 rho1 rho2 delta c f n_t
           epsilon1 epsilon2 lambda_e b_e k_b d_e k_d delta_e
  model.alpha_switches              oscillator only: piecewise-constant truth alpha
  model.alpha_switches.[i].time     switch time
  model.alpha_switches.[i].alpha    alpha from that time on
  model.treatment.[i].start         hiv only: treatment window start
  model.treatment.[i].end           window end (exclusive)
  model.treatment.[i].u             treatment level u(t) in [0, 1] on the window
  truth.t0                          start time of the truth and the filter
  truth.initial_state               true initial state, natural units
  truth.process_noise               diagonal process-noise intensity (null = deterministic)
  truth.substeps                    integrator substeps per observation interval
  channels.[i].name                 channel name used in dataset files
  channels.[i].map.kind             component | log_sum
  channels.[i].map.index            component: observed state index
  channels.[i].map.indices          log_sum: states summed before log10
  channels.[i].map.offset           log_sum: constant added after log10
  channels.[i].times.[i].start      first observation time of a block
  channels.[i].times.[i].step       spacing within the block
  channels.[i].times.[i].count      number of observations in the block
  channels.[i].noise_level          noise sd as a fraction of the channel's RMS
  channels.[i].noise_sd             absolute noise sd (exclusive with noise_level)
  channels.[i].limits               detection-limit eras (empty = never censored)
  channels.[i].limits.[i].from      era start time (null = from the beginning)
  channels.[i].limits.[i].low       lower detection limit (null = none)
  channels.[i].limits.[i].high      upper detection limit (null = none)
  channels.[i].filter_variance      measurement variance assumed by the filter
                                    (null = the true noise variance)
  filter.initial_state              prior mean of the state, natural units
                                    (null = truth.initial_state)
  filter.initial_sd                 prior sd per filter variable, filter coordinates
  filter.estimate.[i].name          parameter estimated jointly with the state
  filter.estimate.[i].transform     identity | log10 | tan
  filter.estimate.[i].initial       prior mean, natural units
  filter.state_transforms           per-state transform (null = model default)
  filter.state_process_noise        diagonal state process noise (null = 0)
  filter.parameter_process_noise    diagonal parameter process noise (null = 1e-6)
  filter.substeps                   RK4 substeps per observation interval
  filter.prune.epsilon              drop history entries whose coupling falls below this
  filter.prune.max_age              drop history entries older than this many steps
  filter.prune.absorb               fold dropped entries into the naive belief
                                    (false = discard them)
  filter.truncation.rel_tolerance   Monte-Carlo standard-error target, relative
  filter.truncation.min_mass        smallest acceptable probability of a censor region
  filter.truncation.pilot_samples   first batch size of the samplers
  filter.truncation.max_samples     sample cap per moment evaluation
  filter.plain_ekf                  treat censored values as exact measurements
  output.dir                        output directory (--out overrides)
  output.dataset                    dataset file name
  output.truth                      truth file name
  output.results                    per-step results file name
  output.summary                    run summary file name

EXIT CODES
  0 success, 1 runtime failure, 2 invalid input

ENVIRONMENT
  CENSOR_EKF_LOG                    log filter, e.g. info or censored_ekf=debug
";

#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace smoothcert::clidetail {

struct GenDataOpts {
  int n = 1000;
  int dim = 2;
  int classes = 2;
  double radius = 3.0;
  double sigma = 1.0;
  double shift = 0.0;
  std::uint64_t seed = 0;
  bool unlabeled = false;
  std::string out_path;
};

struct TrainTargetOpts {
  std::string dataset;
  std::string format = "csv";
  std::string idx_labels;
  std::vector<int> hidden = {16};
  std::string activation = "relu";
  std::string optimizer = "adam";
  double learning_rate = 1e-3;
  int epochs = 100;
  int batch_size = 32;
  std::uint64_t seed = 0;
  std::string noise_family;  // empty: train on clean inputs
  double noise_beta = 2.0;
  double noise_sigma = 1.0;
  std::string loss_out;
  std::string out_path;
};

struct DistillOpts {
  std::string teacher;
  std::string transfer;
  std::string format = "csv";
  std::string idx_labels;
  std::vector<int> hidden = {16};
  long long budget = 10000;
  bool label_only = false;
  double learning_rate = 1e-3;
  int epochs = 50;
  int batch_size = 32;
  std::uint64_t seed = 0;
  std::string report_out;
  std::string loss_out;
  std::string out_path;
};

// Shared knob block for every command that runs the smoothing pipeline.
struct SmoothingOpts {
  std::string family = "gaussian";
  double beta = 2.0;
  double sigma = 1.0;
  int n0 = 100;
  int n = 1000;
  double alpha = 0.001;
  double zeta = 0.5;
  double iota = 0.5;
  std::vector<std::string> norms = {"l2"};
  int mc_n = 2000;
  int bisect_iters = 25;
  double k_threshold = 0.01;
  int particles = 8;
  int pso_iters = 10;
  bool single_round = false;
  int workers = 1;
};

struct CertifyOpts {
  std::string model;
  std::string dataset;
  std::string format = "csv";
  std::string idx_labels;
  SmoothingOpts smoothing;
  long long limit = 0;  // 0: all rows
  std::uint64_t seed = 0;
  std::string out_path;
};

struct RadiusOpts {
  double pa = 0.9;
  double pb = 0.0;  // used only when --pb is passed
  std::string family = "gaussian";
  double beta = 2.0;
  double sigma = 1.0;
  std::string norm = "l2";
  int dim = 2;
  int mc_n = 4000;
  int bisect_iters = 25;
  double k_threshold = 0.01;
  int particles = 8;
  int pso_iters = 10;
  bool curve = false;
  double pa_start = 0.55;
  double pa_stop = 0.995;
  int pa_steps = 10;
  std::uint64_t seed = 0;
  std::string out_path;
};

struct NoiseSearchOpts {
  std::string dataset;
  std::string format = "csv";
  std::string idx_labels;
  std::vector<double> betas;
  std::vector<double> sigmas;
  std::vector<int> hidden = {16};
  double learning_rate = 1e-3;
  int epochs = 30;
  int batch_size = 32;
  int eval_count = 200;
  double train_fraction = 0.7;
  int curve_steps = 24;
  SmoothingOpts smoothing = [] {
    SmoothingOpts s;
    s.n0 = 50;
    s.n = 500;
    s.mc_n = 500;
    s.particles = 4;
    s.pso_iters = 6;
    return s;
  }();
  std::vector<std::string> norms = {"l1", "l2", "linf"};
  std::string curve_norm = "l2";
  std::string out_curves;
  std::uint64_t seed = 0;
  std::string out_scores;
};

struct ScoreOpts {
  std::vector<std::string> inputs;
  std::string dataset;
  std::string format = "csv";
  std::string idx_labels;
  std::vector<std::string> norms = {"l1", "l2", "linf"};
  int grid_steps = 24;
  std::string curve_norm = "l2";
  std::string out_curves;
  std::string out_scores;
};

struct MiaOpts {
  std::vector<std::string> models;
  std::string members;
  std::string nonmembers;
  std::string format = "csv";
  std::string idx_labels;
  std::string scorer = "confidence";
  SmoothingOpts smoothing;
  std::uint64_t seed = 0;
  std::string out_path;
};

struct AttackOpts {
  std::string model;
  std::string dataset;
  std::string format = "csv";
  std::string idx_labels;
  std::string norm = "linf";
  double eps = 0.0;
  int steps = 20;
  double step_size = 0.0;  // 0: derived from eps and steps
  bool random_start = false;
  long long limit = 0;
  std::uint64_t seed = 0;
  std::string out_path;
};

}  // namespace smoothcert::clidetail

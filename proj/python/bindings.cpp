#include <pybind11/complex.h>
#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "prba/checkpoint.hpp"
#include "prba/config.hpp"
#include "prba/interpret.hpp"
#include "prba/polarization.hpp"
#include "prba/training.hpp"

namespace py = pybind11;
using namespace prba;

namespace {

ChannelConfig channel_config(std::size_t n_tx, std::size_t n_rx, std::size_t n_paths, double chi,
                             double chi_ant) {
    ChannelConfig c;
    c.n_tx = n_tx;
    c.n_rx = n_rx;
    c.n_paths = n_paths;
    c.chi = chi;
    c.chi_ant = chi_ant;
    c.validate();
    return c;
}

py::dict eval_dict(const EvalResult& r) {
    py::dict d;
    d["mean_linear"] = r.mean_linear;
    d["stderr_linear"] = r.stderr_linear;
    d["mean_db"] = r.mean_db;
    d["stderr_db"] = r.stderr_db;
    return d;
}

}  // namespace

PYBIND11_MODULE(_prba, m) {
    m.doc() = "Joint polarization reconfiguration and beam alignment lab";

    py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
    py::register_exception<InvalidArgument>(m, "InvalidArgument", PyExc_ValueError);
    py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
    py::register_exception<ParseError>(m, "ParseError", PyExc_ValueError);
    py::register_exception<IntegrityError>(m, "IntegrityError", PyExc_ValueError);
    py::register_exception<KindMismatch>(m, "KindMismatch", PyExc_ValueError);
    py::register_exception<UnsupportedVersion>(m, "UnsupportedVersion", PyExc_ValueError);
    py::register_exception<NumericFault>(m, "NumericFault", PyExc_ArithmeticError);

    m.def("steering_vector", &steering_vector, py::arg("n"), py::arg("phi"));
    m.def("generate_channel",
          [](std::size_t n_tx, std::size_t n_rx, std::size_t n_paths, std::uint64_t seed, double chi,
             double chi_ant) {
              return generate_channel(channel_config(n_tx, n_rx, n_paths, chi, chi_ant), seed).matrix;
          },
          py::arg("n_tx"), py::arg("n_rx"), py::arg("n_paths") = 1, py::arg("seed") = 0,
          py::arg("chi") = 0.2, py::arg("chi_ant") = 0.3);
    m.def("effective_channel",
          py::overload_cast<const CMatrix&, const PolarizationAngles&, const PolarizationAngles&>(
              &effective_channel),
          py::arg("h_dp"), py::arg("angles_tx"), py::arg("angles_rx"));
    m.def("beamforming_gain", &beamforming_gain, py::arg("h_dp"), py::arg("angles_tx"),
          py::arg("angles_rx"), py::arg("w_tx"), py::arg("w_rx"));
    m.def("largest_singular_value_squared", &largest_singular_value_squared, py::arg("h"));
    m.def("svd_beamformers", [](const CMatrix& h) {
        auto b = svd_beamformers(h);
        return py::make_tuple(b.w_tx, b.w_rx, b.sigma_max);
    });
    m.def("ipo_optimize",
          [](const CMatrix& h, double tol, int max_iter, int starts) {
              IpoOptions o;
              o.starts = starts;
              o.tol = tol;
              o.max_iter = max_iter;
              auto r = ipo_optimize(h, o);
              py::dict d;
              d["angles_tx"] = r.angles_tx;
              d["angles_rx"] = r.angles_rx;
              d["w_tx"] = r.w_tx;
              d["w_rx"] = r.w_rx;
              d["gain"] = r.gain;
              d["converged"] = r.converged;
              d["objective"] = r.objective;
              return d;
          },
          py::arg("h_dp"), py::arg("tol") = 1e-12, py::arg("max_iter") = 500,
          py::arg("starts") = IpoOptions{}.starts);
    m.def("brute_force_oracle",
          [](const CMatrix& h, int grid, std::uint64_t budget) {
              auto r = brute_force_polarization_oracle(h, grid, budget);
              return py::make_tuple(r.angles_tx, r.angles_rx, r.gain);
          },
          py::arg("h_dp"), py::arg("grid_points"), py::arg("max_evaluations") = kDefaultOracleBudget);
    m.def("response_power",
          [](const CVector& w, const PolarizationAngles& angles, double chi_ant, bool transmit) {
              auto c = response_power(w, angles, chi_ant, default_theta_grid(), transmit ? ResponseSide::transmit : ResponseSide::receive);
              return py::make_tuple(c.theta, c.power, c.argmax_theta);
          },
          py::arg("w"), py::arg("angles"), py::arg("chi_ant") = 0.3, py::arg("transmit") = true);

    m.def("config_hash", [](const std::string& text) { return config_hash(parse_config_text(text)); });
    m.def("config_json", [](const std::string& text) { return to_json(parse_config_text(text)).dump(); });

    m.def("evaluate",
          [](const std::string& method, const std::string& config_text, std::optional<std::string> checkpoint,
             long episodes, std::uint64_t seed) {
              auto cfg = parse_config_text(config_text);
              PolicyPair pair;
              if (checkpoint) {
                  auto c = load_checkpoint(*checkpoint, policy_kind_from_name(method));
                  pair = std::move(c.policies);
              } else {
                  auto model = cfg.model;
                  model.kind = policy_kind_from_name(method);
                  pair = make_policy_pair(model, static_cast<int>(cfg.channel.n_tx),
                                          static_cast<int>(cfg.channel.n_rx), cfg.seed);
              }
              EvalResult r;
              {
                  py::gil_scoped_release release;
                  r = evaluate_average_gain(*pair.tx, *pair.rx, cfg.channel, cfg.protocol, episodes, seed);
              }
              return eval_dict(r);
          },
          py::arg("method"), py::arg("config_text") = "", py::arg("checkpoint") = py::none(),
          py::arg("episodes") = 100, py::arg("seed") = 1);
}

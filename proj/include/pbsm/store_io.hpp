#pragma once

// SurrogateStore persistence.
//
//   PBSM-STORE 1
//   model <id>
//   param <name> <value>          (zero or more)
//   domain interval <lo> <hi>  |  domain disk <radius>
//   C <value>
//   coercivity_lb <value>
//   functional grad_l2|grad_l4
//   k_default <k>
//   eta <value>
//   generator <name>
//   level <l>
//   spacing <value>
//   d <dim>
//   m <count>
//   n <count>
//   provenance <16 hex digits, or - when unset>
//   end_header
//   <binary: n*d design doubles, n*m observation doubles, n F doubles, little-endian>
//
// Header reals are printed with 17 significant digits so that reloading is bit-exact.

#include <bit>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "pbsm/errors.hpp"
#include "pbsm/surrogate.hpp"

namespace pbsm {

inline std::uint64_t fnv1a(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline std::string format_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

namespace detail {

inline void write_le(std::ostream& out, std::span<const double> values) {
  std::vector<unsigned char> bytes(values.size() * 8);
  for (std::size_t i = 0; i < values.size(); ++i) {
    auto bits = std::bit_cast<std::uint64_t>(values[i]);
    for (int b = 0; b < 8; ++b) bytes[i * 8 + b] = static_cast<unsigned char>(bits >> (8 * b));
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline std::vector<double> read_le(std::istream& in, std::size_t count) {
  std::vector<unsigned char> bytes(count * 8);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (static_cast<std::size_t>(in.gcount()) != bytes.size()) throw FormatError("store payload truncated");
  std::vector<double> values(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(bytes[i * 8 + b]) << (8 * b);
    values[i] = std::bit_cast<double>(bits);
  }
  return values;
}

inline double parse_real(const std::string& token, const std::string& key) {
  try {
    std::size_t used = 0;
    const double v = std::stod(token, &used);
    if (used != token.size()) throw FormatError("");
    return v;
  } catch (const std::exception&) {
    throw FormatError("bad value '" + token + "' for header key '" + key + "'");
  }
}

}  // namespace detail

template <std::size_t D>
void write_store(std::ostream& out, const SurrogateStore<D>& store) {
  validate(store);
  const auto& model = store.model;
  out << "PBSM-STORE 1\n";
  out << "model " << model.id << '\n';
  for (const auto& [name, value] : model.params) out << "param " << name << ' ' << format_real(value) << '\n';
  if (model.domain.kind == ParameterDomain::Kind::Interval) {
    out << "domain interval " << format_real(model.domain.lo) << ' ' << format_real(model.domain.hi) << '\n';
  } else {
    out << "domain disk " << format_real(model.domain.radius) << '\n';
  }
  out << "C " << format_real(model.C) << '\n';
  out << "coercivity_lb " << format_real(model.coercivity_lb) << '\n';
  out << "functional " << to_string(model.functional) << '\n';
  out << "k_default " << store.k_default << '\n';
  out << "eta " << format_real(store.eta) << '\n';
  out << "generator " << (store.design.generator.empty() ? "custom" : store.design.generator) << '\n';
  out << "level " << store.design.level << '\n';
  out << "spacing " << format_real(store.design.spacing) << '\n';
  out << "d " << D << '\n';
  out << "m " << store.m << '\n';
  out << "n " << store.size() << '\n';
  out << "provenance " << (store.provenance.empty() ? "-" : store.provenance) << '\n';
  out << "end_header\n";

  std::vector<double> flat;
  flat.reserve(store.size() * D);
  for (const auto& p : store.design.points) flat.insert(flat.end(), p.begin(), p.end());
  detail::write_le(out, flat);
  detail::write_le(out, store.observations);
  detail::write_le(out, store.functional_values);
  if (!out) throw FormatError("failed writing surrogate store");
}

/// Reads a store written by write_store. The model structure is rebuilt from the registry, and the
/// stored constants must agree with the rebuilt ones.
template <std::size_t D>
SurrogateStore<D> read_store(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "PBSM-STORE 1") throw FormatError("not a surrogate store (bad magic line)");

  std::string model_id;
  std::map<std::string, double> params;
  std::optional<ParameterDomain> domain;
  double C = 0.0;
  double coercivity = 0.0;
  std::string functional;
  SurrogateStore<D> store;
  std::size_t d = 0;
  std::size_t n = 0;
  bool have_n = false;
  bool have_m = false;
  bool ended = false;

  while (std::getline(in, line)) {
    if (line == "end_header") {
      ended = true;
      break;
    }
    std::istringstream fields(line);
    std::string key;
    fields >> key;
    std::vector<std::string> values;
    for (std::string v; fields >> v;) values.push_back(v);
    auto one = [&]() -> const std::string& {
      if (values.size() != 1) throw FormatError("header key '" + key + "' expects one value");
      return values.front();
    };
    if (key == "model") {
      model_id = one();
    } else if (key == "param") {
      if (values.size() != 2) throw FormatError("param line expects a name and a value");
      params[values[0]] = detail::parse_real(values[1], values[0]);
    } else if (key == "domain") {
      if (values.size() == 3 && values[0] == "interval") {
        domain = ParameterDomain::interval(detail::parse_real(values[1], key), detail::parse_real(values[2], key));
      } else if (values.size() == 2 && values[0] == "disk") {
        domain = ParameterDomain::disk(detail::parse_real(values[1], key));
      } else {
        throw FormatError("bad domain line '" + line + "'");
      }
    } else if (key == "C") {
      C = detail::parse_real(one(), key);
    } else if (key == "coercivity_lb") {
      coercivity = detail::parse_real(one(), key);
    } else if (key == "functional") {
      functional = one();
    } else if (key == "k_default") {
      store.k_default = static_cast<int>(detail::parse_real(one(), key));
    } else if (key == "eta") {
      store.eta = detail::parse_real(one(), key);
    } else if (key == "generator") {
      store.design.generator = one();
    } else if (key == "level") {
      store.design.level = static_cast<int>(detail::parse_real(one(), key));
    } else if (key == "spacing") {
      store.design.spacing = detail::parse_real(one(), key);
    } else if (key == "d") {
      d = static_cast<std::size_t>(detail::parse_real(one(), key));
    } else if (key == "m") {
      store.m = static_cast<std::size_t>(detail::parse_real(one(), key));
      have_m = true;
    } else if (key == "n") {
      n = static_cast<std::size_t>(detail::parse_real(one(), key));
      have_n = true;
    } else if (key == "provenance") {
      store.provenance = one() == "-" ? "" : one();
    } else {
      throw FormatError("unknown header key '" + key + "'");
    }
  }
  if (!ended) throw FormatError("store header not terminated");
  if (d != D) throw FormatError("store dimension " + std::to_string(d) + " does not match " + std::to_string(D));
  if (!have_n || !have_m || !domain || model_id.empty()) throw FormatError("store header incomplete");

  store.model = make_model<D>(model_id, params, *domain);
  store.model.domain = *domain;
  if (store.model.C != C || store.model.coercivity_lb != coercivity ||
      to_string(store.model.functional) != functional) {
    throw FormatError("stored constants disagree with the registered '" + model_id + "' model");
  }

  const auto flat = detail::read_le(in, n * D);
  store.design.points.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < D; ++j) store.design.points[i][j] = flat[i * D + j];
  }
  store.observations = detail::read_le(in, n * store.m);
  store.functional_values = detail::read_le(in, n);
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError("trailing bytes after store payload");
  validate(store);
  return store;
}

template <std::size_t D>
void save_store(const std::filesystem::path& path, const SurrogateStore<D>& store) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  write_store(out, store);
}

template <std::size_t D>
SurrogateStore<D> load_store(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingArtifact("surrogate store " + path.string() + " not found");
  return read_store<D>(in);
}

}  // namespace pbsm

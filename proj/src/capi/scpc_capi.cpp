#include "scpc.h"

#include <cstring>
#include <string>

#include "core/config.hpp"
#include "core/errors.hpp"
#include "core/geometry.hpp"
#include "core/pipeline.hpp"

using scpc::IoError;

struct scpc_config {
  scpc::pipeline::RunConfig impl;
};

struct scpc_cloud {
  scpc::geometry::PointCloud impl;
};

namespace {

thread_local std::string g_last_error;

scpc_status fail(scpc_status status, const char* what) {
  g_last_error = what;
  return status;
}

// Runs fn, translating C++ exceptions into status codes.
template <typename Fn>
scpc_status guarded(Fn&& fn) {
  try {
    fn();
    return SCPC_OK;
  } catch (const std::invalid_argument& e) {
    return fail(SCPC_ERROR_INVALID_ARGUMENT, e.what());
  } catch (const IoError& e) {
    return fail(SCPC_ERROR_IO, e.what());
  } catch (const std::exception& e) {
    return fail(SCPC_ERROR_RUNTIME, e.what());
  } catch (...) {
    return fail(SCPC_ERROR_RUNTIME, "unknown error");
  }
}

scpc_status copy_string(const std::string& value, char* buffer,
                        size_t buffer_size) {
  if (!buffer || buffer_size == 0)
    throw std::invalid_argument("output buffer is null or empty");
  if (value.size() + 1 > buffer_size) {
    throw std::invalid_argument("output buffer too small (need " +
                                std::to_string(value.size() + 1) + " bytes)");
  }
  std::memcpy(buffer, value.c_str(), value.size() + 1);
  return SCPC_OK;
}

}  // namespace

extern "C" {

const char* scpc_version(void) { return "1.0.0"; }

const char* scpc_last_error(void) { return g_last_error.c_str(); }

scpc_status scpc_config_create(scpc_config** out_config) {
  return guarded([&] {
    if (!out_config) throw std::invalid_argument("out_config is null");
    *out_config = new scpc_config{};
  });
}

void scpc_config_destroy(scpc_config* config) { delete config; }

scpc_status scpc_config_load_file(scpc_config* config, const char* path) {
  return guarded([&] {
    if (!config || !path) throw std::invalid_argument("null argument");
    config->impl.load_file(path);
  });
}

scpc_status scpc_config_set(scpc_config* config, const char* key,
                            const char* value) {
  return guarded([&] {
    if (!config || !key || !value) throw std::invalid_argument("null argument");
    config->impl.set(key, value);
  });
}

scpc_status scpc_config_get(const scpc_config* config, const char* key,
                            char* buffer, size_t buffer_size) {
  return guarded([&] {
    if (!config || !key) throw std::invalid_argument("null argument");
    copy_string(config->impl.get(key), buffer, buffer_size);
  });
}

scpc_status scpc_config_hash(const scpc_config* config, char* buffer,
                             size_t buffer_size) {
  return guarded([&] {
    if (!config) throw std::invalid_argument("null argument");
    copy_string(config->impl.hash(), buffer, buffer_size);
  });
}

scpc_status scpc_config_validate(const scpc_config* config) {
  return guarded([&] {
    if (!config) throw std::invalid_argument("null argument");
    config->impl.validate();
  });
}

scpc_status scpc_cloud_generate(const char* kind, size_t n_points,
                                double noise_sigma, uint64_t seed,
                                scpc_cloud** out_cloud) {
  return guarded([&] {
    if (!kind || !out_cloud) throw std::invalid_argument("null argument");
    scpc::geometry::ShapeSpec spec;
    spec.kind = scpc::geometry::shape_kind_from_string(kind);
    spec.n_points = n_points;
    spec.noise_sigma = noise_sigma;
    spec.seed = seed;
    *out_cloud = new scpc_cloud{scpc::geometry::generate_shape(spec)};
  });
}

scpc_status scpc_cloud_read_xyz(const char* path, scpc_cloud** out_cloud) {
  return guarded([&] {
    if (!path || !out_cloud) throw std::invalid_argument("null argument");
    *out_cloud = new scpc_cloud{scpc::geometry::read_xyz(path)};
  });
}

scpc_status scpc_cloud_write_xyz(const scpc_cloud* cloud, const char* path) {
  return guarded([&] {
    if (!cloud || !path) throw std::invalid_argument("null argument");
    scpc::geometry::write_xyz(cloud->impl, path);
  });
}

size_t scpc_cloud_point_count(const scpc_cloud* cloud) {
  return cloud ? cloud->impl.size() : 0;
}

int scpc_cloud_has_labels(const scpc_cloud* cloud) {
  return cloud && cloud->impl.has_labels() ? 1 : 0;
}

scpc_status scpc_cloud_copy_points(const scpc_cloud* cloud, double* out_xyz) {
  return guarded([&] {
    if (!cloud || !out_xyz) throw std::invalid_argument("null argument");
    for (size_t i = 0; i < cloud->impl.size(); ++i) {
      out_xyz[3 * i + 0] = cloud->impl.points[i][0];
      out_xyz[3 * i + 1] = cloud->impl.points[i][1];
      out_xyz[3 * i + 2] = cloud->impl.points[i][2];
    }
  });
}

scpc_status scpc_cloud_copy_labels(const scpc_cloud* cloud,
                                   int32_t* out_labels) {
  return guarded([&] {
    if (!cloud || !out_labels) throw std::invalid_argument("null argument");
    if (!cloud->impl.has_labels())
      throw std::invalid_argument("cloud has no labels");
    for (size_t i = 0; i < cloud->impl.size(); ++i)
      out_labels[i] = cloud->impl.labels[i];
  });
}

void scpc_cloud_destroy(scpc_cloud* cloud) { delete cloud; }

scpc_status scpc_run_stage(const scpc_config* config, const char* stage) {
  return guarded([&] {
    if (!config || !stage) throw std::invalid_argument("null argument");
    scpc::pipeline::run_stage(config->impl, stage);
  });
}

scpc_status scpc_gradcheck(char* report_buffer, size_t buffer_size,
                           int* out_all_passed) {
  bool passed = false;
  const scpc_status status = guarded([&] {
    const std::string report = scpc::pipeline::cmd_gradcheck(passed);
    if (report_buffer) copy_string(report, report_buffer, buffer_size);
  });
  if (out_all_passed) *out_all_passed = passed ? 1 : 0;
  if (status != SCPC_OK) return status;
  if (!passed)
    return fail(SCPC_ERROR_CHECK_FAILED, "gradient checks reported failures");
  return SCPC_OK;
}

}  // extern "C"

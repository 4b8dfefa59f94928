#ifndef SIVS_CHECKPOINT_HPP
#define SIVS_CHECKPOINT_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "sivs/adam.hpp"
#include "sivs/tensor.hpp"

// SIVC checkpoint container (byte layout in docs/formats.md): a config
// snapshot plus ordered named float records, CRC-protected. Model weights,
// optimizer moments ("opt." records) and scalar metadata ("meta." records)
// all ride in the same record table, so save -> load -> save is trivially
// byte-identical.

namespace sivs {

struct CkptRecord {
  std::string name;
  Shape shape;
  std::vector<float> data;
};

struct Checkpoint {
  std::uint16_t version = 1;
  std::string config_text;
  std::vector<CkptRecord> records;  // write order == this order

  const CkptRecord* find(const std::string& name) const;
  void add(const std::string& name, Shape shape, std::vector<float> data);
  void add_scalar(const std::string& name, float v) { add(name, {1}, {v}); }
  float scalar(const std::string& name) const;  // throws DataError if absent
  bool has(const std::string& name) const { return find(name) != nullptr; }
};

void save_checkpoint(const Checkpoint& ck, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// one line per record: name, shape, element count
std::string checkpoint_manifest(const Checkpoint& ck);

// Parameters by registry name. restore reports the first parameter (in
// registry order) that is missing or whose shape disagrees.
void record_params(Checkpoint& ck, const ParamMap<float>& params);
void restore_params(const Checkpoint& ck, ParamMap<float>& params);

// Adam moments as "opt.m.<param>" / "opt.v.<param>" plus "opt.t".
void record_adam(Checkpoint& ck, const Adam<float>& opt, const ParamMap<float>& params);
void restore_adam(const Checkpoint& ck, Adam<float>& opt, const ParamMap<float>& params);

}  // namespace sivs

#endif

#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <unordered_map>
#include <vector>

#include "dconn/codec.hpp"
#include "dconn/grad_check.hpp"
#include "dconn/tensor.hpp"

namespace dconn {

inline constexpr std::size_t kSubPaths = 8;

struct NetConfig {
    std::size_t input_channels = 1;
    std::size_t classes = 1;
    std::size_t input_size = 64;
    std::vector<std::size_t> encoder_channels{16, 32, 64, 64, 64};
    std::vector<std::size_t> decoder_channels{32, 16, 16, 16};
    // 0 selects the default: 2 when the sub-path width is at least 4, else 1.
    std::size_t attention_reduction = 0;

    std::size_t conn_channels() const { return kDirections * classes; }
    std::size_t deep_channels() const { return encoder_channels.back(); }
    std::size_t slice_width() const { return deep_channels() / kSubPaths; }
    std::size_t reduction() const;
    // Throws std::invalid_argument describing the first violated constraint.
    void validate() const;

    bool operator==(const NetConfig&) const = default;
};

// Ordered collection of named learnable tensors.
class NetParams {
   public:
    Tensor& add(const std::string& name, Tensor tensor);
    const Tensor& get(const std::string& name) const;
    Tensor& get(const std::string& name);
    bool contains(const std::string& name) const { return index_.count(name) != 0; }

    const std::vector<NamedTensor>& entries() const { return entries_; }
    std::size_t scalar_count() const;
    // Scalars held by tensors whose name starts with `prefix`.
    std::size_t scalar_count(const std::string& prefix) const;
    void zero_grad();
    // Deep copy with fresh storage.
    NetParams clone() const;

   private:
    std::vector<NamedTensor> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

// Weights uniform in +-1/sqrt(fan_in), biases zero, attention gammas zero.
// Each tensor draws from its own stream of the seed.
NetParams init_params(const NetConfig& config, std::uint64_t seed);

// Parameters of one position+channel attention pair at the given width,
// named "<prefix>.pam.{q,k,v}.{w,b}", "<prefix>.pam.gamma", "<prefix>.cam.gamma".
void add_attention_params(NetParams& params, const std::string& prefix, std::size_t width, std::size_t reduction,
                          std::uint64_t seed);

struct PriorOutput {
    Tensor x_prior;      // [N, 8K, H, W] logits
    Tensor alpha_prior;  // [N, C_e5]
};

struct SpaceOutput {
    Tensor r_next;
    Tensor alpha_nd;  // [N, 1, h, w]
};

struct ForwardOutput {
    Tensor x_main;   // [N, 8K, H, W] logits
    Tensor x_prior;  // [N, 8K, H, W] logits
    Tensor alpha_prior;
    std::vector<Tensor> alpha_nd;
    std::vector<Tensor> encoder;  // e1..e5
    Tensor e_sde;
};

Tensor conv_layer(const Tensor& x, const NetParams& params, const std::string& name, std::size_t stride = 1);

std::vector<Tensor> encoder_forward(const Tensor& image, const NetParams& params, const NetConfig& config);
PriorOutput directional_prior(const Tensor& e5, const NetParams& params, const NetConfig& config);
Tensor pam_forward(const Tensor& x, const NetParams& params, const std::string& prefix);
Tensor cam_forward(const Tensor& x, const NetParams& params, const std::string& prefix);
Tensor sub_path_excitation(const Tensor& e5, const Tensor& alpha_prior, const NetParams& params);
SpaceOutput space_block(const Tensor& r, const Tensor& d_next, const NetParams& params, const std::string& prefix);
Tensor feature_block(const Tensor& r, const Tensor& skip, const NetParams& params, const std::string& prefix);
ForwardOutput net_forward(const Tensor& image, const NetParams& params, const NetConfig& config);

// DCW1: "DCW1", u32 count, then per tensor: u32 name length, UTF-8 name,
// u32 ndim, u32 dims..., f32 little-endian data.
void write_checkpoint(std::ostream& out, const NetParams& params);
std::vector<NamedTensor> read_checkpoint(std::istream& in);
void write_checkpoint_file(const std::string& path, const NetParams& params);
// Loads into `params`, requiring identical names and shapes.
void load_checkpoint_file(const std::string& path, NetParams& params);
void assign_checkpoint(const std::vector<NamedTensor>& loaded, NetParams& params);

}  // namespace dconn

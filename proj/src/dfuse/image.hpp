#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

namespace dfuse {

enum class Channels { Gray1 = 1, Rgb3 = 3 };

// Planar (channel-major) float image with values nominally in [0,1].
class Image {
public:
    Image() = default;
    Image(int height, int width, Channels channels, float fill = 0.0f);
    Image(int height, int width, Channels channels, std::vector<float> planar);

    int height() const noexcept { return h_; }
    int width() const noexcept { return w_; }
    int channels() const noexcept { return static_cast<int>(c_); }
    Channels layout() const noexcept { return c_; }
    bool is_rgb() const noexcept { return c_ == Channels::Rgb3; }
    bool empty() const noexcept { return data_.empty(); }
    std::size_t pixels() const noexcept { return static_cast<std::size_t>(h_) * w_; }
    std::size_t size() const noexcept { return data_.size(); }

    float& at(int c, int y, int x) { return data_[(static_cast<std::size_t>(c) * h_ + y) * w_ + x]; }
    float at(int c, int y, int x) const { return data_[(static_cast<std::size_t>(c) * h_ + y) * w_ + x]; }

    std::span<float> plane(int c) { return {data_.data() + static_cast<std::size_t>(c) * pixels(), pixels()}; }
    std::span<const float> plane(int c) const
    {
        return {data_.data() + static_cast<std::size_t>(c) * pixels(), pixels()};
    }
    std::span<float> data() noexcept { return data_; }
    std::span<const float> data() const noexcept { return data_; }

    bool same_shape(const Image& o) const noexcept { return h_ == o.h_ && w_ == o.w_ && c_ == o.c_; }
    bool same_extent(const Image& o) const noexcept { return h_ == o.h_ && w_ == o.w_; }

    void clamp01();

    friend bool operator==(const Image&, const Image&) = default;

private:
    int h_ = 0;
    int w_ = 0;
    Channels c_ = Channels::Gray1;
    std::vector<float> data_;
};

// Numpy-style "reflect" index (edge sample not repeated); valid for any offset.
int reflect_index(int i, int n) noexcept;

Image reflect_pad(const Image& img, int top, int bottom, int left, int right);
Image crop(const Image& img, int top, int left, int height, int width);
Image flip_horizontal(const Image& img);

// 8-bit PNG/JPEG I/O. Decoded samples map to v/255; encoding clamps then rounds half up.
Image load_image(const std::filesystem::path& path);
void save_png(const Image& img, const std::filesystem::path& path);

std::uint8_t to_u8(float v) noexcept;

}  // namespace dfuse

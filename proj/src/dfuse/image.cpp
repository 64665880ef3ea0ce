#include "dfuse/image.hpp"

#include "dfuse/error.hpp"

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>

#include <jpeglib.h>
#include <png.h>

namespace dfuse {

Image::Image(int height, int width, Channels channels, float fill)
    : h_(height), w_(width), c_(channels)
{
    require(height >= 1 && width >= 1, ErrorCode::InvalidArgument, "image extent must be at least 1x1");
    data_.assign(static_cast<std::size_t>(height) * width * static_cast<int>(channels), fill);
}

Image::Image(int height, int width, Channels channels, std::vector<float> planar)
    : h_(height), w_(width), c_(channels), data_(std::move(planar))
{
    require(height >= 1 && width >= 1, ErrorCode::InvalidArgument, "image extent must be at least 1x1");
    require(data_.size() == static_cast<std::size_t>(height) * width * static_cast<int>(channels),
            ErrorCode::ShapeMismatch, "planar buffer size does not match image extent");
}

void Image::clamp01()
{
    for (auto& v : data_)
        v = std::clamp(v, 0.0f, 1.0f);
}

int reflect_index(int i, int n) noexcept
{
    if (n == 1)
        return 0;
    const int period = 2 * (n - 1);
    i %= period;
    if (i < 0)
        i += period;
    return i < n ? i : period - i;
}

Image reflect_pad(const Image& img, int top, int bottom, int left, int right)
{
    require(top >= 0 && bottom >= 0 && left >= 0 && right >= 0, ErrorCode::InvalidArgument,
            "negative padding");
    const int h = img.height() + top + bottom;
    const int w = img.width() + left + right;
    Image out(h, w, img.layout());
    for (int c = 0; c < img.channels(); ++c)
        for (int y = 0; y < h; ++y) {
            const int sy = reflect_index(y - top, img.height());
            for (int x = 0; x < w; ++x)
                out.at(c, y, x) = img.at(c, sy, reflect_index(x - left, img.width()));
        }
    return out;
}

Image crop(const Image& img, int top, int left, int height, int width)
{
    require(top >= 0 && left >= 0 && top + height <= img.height() && left + width <= img.width(),
            ErrorCode::InvalidArgument, "crop window outside image");
    Image out(height, width, img.layout());
    for (int c = 0; c < img.channels(); ++c)
        for (int y = 0; y < height; ++y)
            std::copy_n(img.plane(c).data() + static_cast<std::size_t>(top + y) * img.width() + left, width, &out.at(c, y, 0));
    return out;
}

Image flip_horizontal(const Image& img)
{
    Image out(img.height(), img.width(), img.layout());
    for (int c = 0; c < img.channels(); ++c)
        for (int y = 0; y < img.height(); ++y)
            for (int x = 0; x < img.width(); ++x)
                out.at(c, y, x) = img.at(c, y, img.width() - 1 - x);
    return out;
}

std::uint8_t to_u8(float v) noexcept
{
    const double s = std::clamp(static_cast<double>(v), 0.0, 1.0) * 255.0;
    return static_cast<std::uint8_t>(std::floor(s + 0.5));
}

namespace {

Image from_interleaved(const std::uint8_t* buf, int h, int w, int comps)
{
    const Channels ch = comps == 3 ? Channels::Rgb3 : Channels::Gray1;
    Image out(h, w, ch);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < comps; ++c)
                out.at(c, y, x) = static_cast<float>(buf[(static_cast<std::size_t>(y) * w + x) * comps + c]) / 255.0f;
    return out;
}

Image load_png(const std::filesystem::path& path)
{
    png_image image;
    std::memset(&image, 0, sizeof image);
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.string().c_str()))
        fail(ErrorCode::Format, "cannot read PNG " + path.string() + ": " + image.message);
    const bool color = (image.format & PNG_FORMAT_FLAG_COLOR) != 0;
    image.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr)) {
        std::string msg = image.message;
        png_image_free(&image);
        fail(ErrorCode::Format, "cannot decode PNG " + path.string() + ": " + msg);
    }
    return from_interleaved(buf.data(), static_cast<int>(image.height), static_cast<int>(image.width),
                            color ? 3 : 1);
}

struct JpegErrorMgr {
    jpeg_error_mgr pub;
    std::jmp_buf jump;
    char message[JMSG_LENGTH_MAX];
};

void jpeg_error_exit(j_common_ptr cinfo)
{
    auto* err = reinterpret_cast<JpegErrorMgr*>(cinfo->err);
    (*cinfo->err->format_message)(cinfo, err->message);
    std::longjmp(err->jump, 1);
}

Image load_jpeg(const std::filesystem::path& path)
{
    std::unique_ptr<std::FILE, int (*)(std::FILE*)> fp(std::fopen(path.string().c_str(), "rb"), &std::fclose);
    if (!fp)
        fail(ErrorCode::Io, "cannot open " + path.string());

    jpeg_decompress_struct cinfo;
    JpegErrorMgr jerr;
    cinfo.err = jpeg_std_error(&jerr.pub);
    jerr.pub.error_exit = jpeg_error_exit;
    std::vector<std::uint8_t> buf;
    int h = 0, w = 0, comps = 0;
    if (setjmp(jerr.jump)) {
        jpeg_destroy_decompress(&cinfo);
        fail(ErrorCode::Format, "cannot decode JPEG " + path.string() + ": " + jerr.message);
    }
    jpeg_create_decompress(&cinfo);
    jpeg_stdio_src(&cinfo, fp.get());
    jpeg_read_header(&cinfo, TRUE);
    cinfo.out_color_space = cinfo.num_components == 1 ? JCS_GRAYSCALE : JCS_RGB;
    jpeg_start_decompress(&cinfo);
    h = static_cast<int>(cinfo.output_height);
    w = static_cast<int>(cinfo.output_width);
    comps = cinfo.output_components;
    buf.resize(static_cast<std::size_t>(h) * w * comps);
    while (cinfo.output_scanline < cinfo.output_height) {
        JSAMPROW row = buf.data() + static_cast<std::size_t>(cinfo.output_scanline) * w * comps;
        jpeg_read_scanlines(&cinfo, &row, 1);
    }
    jpeg_finish_decompress(&cinfo);
    jpeg_destroy_decompress(&cinfo);
    return from_interleaved(buf.data(), h, w, comps);
}

}  // namespace

Image load_image(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        fail(ErrorCode::Io, "cannot open " + path.string());
    unsigned char magic[8] = {};
    in.read(reinterpret_cast<char*>(magic), sizeof magic);
    if (in.gcount() >= 8 && png_sig_cmp(magic, 0, 8) == 0)
        return load_png(path);
    if (in.gcount() >= 3 && magic[0] == 0xFF && magic[1] == 0xD8 && magic[2] == 0xFF)
        return load_jpeg(path);
    fail(ErrorCode::Format, "unsupported image format: " + path.string());
}

void save_png(const Image& img, const std::filesystem::path& path)
{
    const int comps = img.channels();
    std::vector<std::uint8_t> buf(img.size());
    for (int y = 0; y < img.height(); ++y)
        for (int x = 0; x < img.width(); ++x)
            for (int c = 0; c < comps; ++c)
                buf[(static_cast<std::size_t>(y) * img.width() + x) * comps + c] = to_u8(img.at(c, y, x));

    png_image image;
    std::memset(&image, 0, sizeof image);
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(img.width());
    image.height = static_cast<png_uint_32>(img.height());
    image.format = comps == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    if (!png_image_write_to_file(&image, path.string().c_str(), 0, buf.data(), 0, nullptr))
        fail(ErrorCode::Io, "cannot write PNG " + path.string() + ": " + image.message);
}

}  // namespace dfuse

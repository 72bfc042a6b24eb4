#include "hnext/data.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <numeric>

#include "hnext/errors.hpp"
#include "hnext/rng.hpp"

namespace hnext {
namespace {

constexpr std::uint32_t kImagesMagic = 0x00000803;
constexpr std::uint32_t kLabelsMagic = 0x00000801;

std::uint32_t read_u32_be(std::istream& in, const std::string& path) {
    std::uint8_t buf[4];
    if (!in.read(reinterpret_cast<char*>(buf), 4))
        throw LengthError("idx header truncated: " + path);
    return (static_cast<std::uint32_t>(buf[0]) << 24) | (static_cast<std::uint32_t>(buf[1]) << 16) |
           (static_cast<std::uint32_t>(buf[2]) << 8) | static_cast<std::uint32_t>(buf[3]);
}

template <typename T>
void write_pod(std::ostream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in, const std::string& path) {
    T v{};
    if (!in.read(reinterpret_cast<char*>(&v), sizeof(T)))
        throw LengthError("archive truncated: " + path);
    return v;
}

void write_string(std::ostream& out, const std::string& s) {
    write_pod(out, static_cast<std::uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& in, const std::string& path) {
    const std::uint32_t len = read_pod<std::uint32_t>(in, path);
    std::string s(len, '\0');
    if (!in.read(s.data(), len)) throw LengthError("archive truncated: " + path);
    return s;
}

// normalized copy of one source image
RealGrid source_image(const std::vector<std::uint8_t>& images, std::size_t idx, int h, int w) {
    RealGrid g(h, w);
    const std::uint8_t* src = images.data() + idx * static_cast<std::size_t>(h) * w;
    for (std::size_t i = 0; i < g.size(); ++i) g.values()[i] = src[i] / 255.0;
    return g;
}


struct SplitPlan {
    std::vector<std::size_t> indices;   // into the source pool
    std::vector<double> angles;         // degrees, aligned with indices
    bool from_test_pool = false;
};

// rotations are applied in parallel; the angle draws happen up front so the
// RNG stream stays independent of the thread count
void materialize(RotatedDataset& ds, const SplitPlan& plan, const MnistSource& src) {
    const int h = src.height;
    const int w = src.width;
    const std::vector<std::uint8_t>& images = plan.from_test_pool ? src.test_images
                                                                  : src.train_images;
    const std::vector<std::uint8_t>& labels = plan.from_test_pool ? src.test_labels
                                                                  : src.train_labels;
    const std::size_t n = plan.indices.size();
    ds.height = h;
    ds.width = w;
    ds.images.assign(n * static_cast<std::size_t>(h) * w, 0.0f);
    ds.labels.assign(n, 0);
    ds.angles.assign(n, 0.0);
#pragma omp parallel for schedule(dynamic, 64)
    for (long i = 0; i < static_cast<long>(n); ++i) {
        const std::size_t idx = plan.indices[static_cast<std::size_t>(i)];
        const double angle = plan.angles[static_cast<std::size_t>(i)];
        RealGrid img = source_image(images, idx, h, w);
        if (angle != 0.0) img = rotate_resample(img, angle * 3.141592653589793238462643 / 180.0);
        float* dst = ds.images.data() + static_cast<std::size_t>(i) * h * w;
        for (std::size_t p = 0; p < img.size(); ++p) dst[p] = static_cast<float>(img.values()[p]);
        ds.labels[static_cast<std::size_t>(i)] = labels[idx];
        ds.angles[static_cast<std::size_t>(i)] = angle;
    }
}

void trim(SplitPlan& plan, int max_count) {
    if (max_count > 0 && static_cast<std::size_t>(max_count) < plan.indices.size()) {
        plan.indices.resize(max_count);
        plan.angles.resize(max_count);
    }
}

}  // namespace

IdxData read_idx(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("idx file not readable: " + path);
    IdxData d;
    d.magic = read_u32_be(in, path);
    int ndim = 0;
    if (d.magic == kImagesMagic)
        ndim = 3;
    else if (d.magic == kLabelsMagic)
        ndim = 1;
    else
        throw FormatError("idx file has unsupported magic: " + path);
    std::size_t total = 1;
    for (int i = 0; i < ndim; ++i) {
        d.dims.push_back(read_u32_be(in, path));
        total *= d.dims.back();
    }
    d.payload.resize(total);
    if (!in.read(reinterpret_cast<char*>(d.payload.data()), static_cast<std::streamsize>(total)))
        throw LengthError("idx payload shorter than the header promises: " + path);
    return d;
}

MnistSource load_mnist(const std::string& dir) {
    auto file = [&](const char* name) { return dir + "/" + name; };
    MnistSource src;
    IdxData ti = read_idx(file("train-images-idx3-ubyte"));
    IdxData tl = read_idx(file("train-labels-idx1-ubyte"));
    IdxData vi = read_idx(file("t10k-images-idx3-ubyte"));
    IdxData vl = read_idx(file("t10k-labels-idx1-ubyte"));
    if (ti.dims.size() != 3 || ti.dims[0] != tl.dims[0])
        throw DataError("mnist train images/labels disagree on sample count");
    if (vi.dims.size() != 3 || vi.dims[0] != vl.dims[0])
        throw DataError("mnist test images/labels disagree on sample count");
    src.height = static_cast<int>(ti.dims[1]);
    src.width = static_cast<int>(ti.dims[2]);
    src.train_images = std::move(ti.payload);
    src.train_labels = std::move(tl.payload);
    src.test_images = std::move(vi.payload);
    src.test_labels = std::move(vl.payload);
    return src;
}

RealGrid RotatedDataset::image(std::size_t idx) const {
    RealGrid g(height, width);
    const float* src = images.data() + idx * static_cast<std::size_t>(height) * width;
    for (std::size_t i = 0; i < g.size(); ++i) g.values()[i] = src[i];
    return g;
}

const std::vector<double>& fixed_eval_angles() {
    static const std::vector<double> angles = [] {
        std::vector<double> a;
        for (int d = 0; d < 360; d += 30) a.push_back(d);
        return a;
    }();
    return angles;
}

DatasetBundle generate_dataset(const std::string& variant, std::uint64_t seed,
                               const MnistSource& source, bool rot_mnist_swap_test_valid,
                               const GenerateOptions& options) {
    if (variant == "cifar-rot-test" || variant == "swn-gcn-cifar")
        throw ParameterError("variant '" + variant + "' is declared but not generated here");
    if (variant != "mnist-rot-test" && variant != "swn-gcn-mnist" && variant != "rot-mnist")
        throw ParameterError("unknown dataset variant: " + variant);
    if (source.train_count() < 60000 || source.test_count() < 10000)
        throw DataError("mnist source smaller than the expected 60k/10k");

    Rng rng(seed);
    std::vector<std::size_t> train_pool(source.train_count());
    std::iota(train_pool.begin(), train_pool.end(), 0);
    rng.shuffle(train_pool);
    std::vector<std::size_t> test_pool(source.test_count());
    std::iota(test_pool.begin(), test_pool.end(), 0);
    rng.shuffle(test_pool);

    SplitPlan train_plan;
    SplitPlan valid_plan;
    SplitPlan test_plan;
    test_plan.from_test_pool = true;

    if (variant == "mnist-rot-test" || variant == "swn-gcn-mnist") {
        train_plan.indices.assign(train_pool.begin(), train_pool.begin() + 50000);
        train_plan.angles.assign(50000, 0.0);
        valid_plan.indices.assign(train_pool.begin() + 50000, train_pool.begin() + 60000);
        if (variant == "mnist-rot-test") {
            valid_plan.angles.reserve(10000);
            for (int i = 0; i < 10000; ++i) valid_plan.angles.push_back(rng.uniform(0.0, 360.0));
        } else {
            valid_plan.angles.assign(10000, 0.0);  // upright: feeds the fixed-angle evaluator
        }
        trim(train_plan, options.max_train);
        trim(valid_plan, options.max_valid);

        std::vector<std::size_t> base(test_pool.begin(), test_pool.begin() + 10000);
        if (options.max_test_base > 0 &&
            static_cast<std::size_t>(options.max_test_base) < base.size())
            base.resize(options.max_test_base);
        if (variant == "mnist-rot-test") {
            test_plan.indices = base;
            test_plan.angles.reserve(base.size());
            for (std::size_t i = 0; i < base.size(); ++i)
                test_plan.angles.push_back(rng.uniform(0.0, 360.0));
        } else {
            // each base image replicated at every fixed angle, angle-major
            for (double angle : fixed_eval_angles())
                for (std::size_t idx : base) {
                    test_plan.indices.push_back(idx);
                    test_plan.angles.push_back(angle);
                }
        }
    } else {  // rot-mnist, Table sizes as printed: 10k train / 2k test / 50k valid
        train_plan.indices.assign(train_pool.begin(), train_pool.begin() + 10000);
        for (int i = 0; i < 10000; ++i) train_plan.angles.push_back(rng.uniform(0.0, 360.0));

        std::vector<std::size_t> big(train_pool.begin() + 10000, train_pool.begin() + 60000);
        std::vector<double> big_angles;
        big_angles.reserve(big.size());
        for (std::size_t i = 0; i < big.size(); ++i) big_angles.push_back(rng.uniform(0.0, 360.0));
        std::vector<std::size_t> small(test_pool.begin(), test_pool.begin() + 2000);
        std::vector<double> small_angles;
        for (int i = 0; i < 2000; ++i) small_angles.push_back(rng.uniform(0.0, 360.0));

        if (rot_mnist_swap_test_valid) {
            test_plan.from_test_pool = false;
            test_plan.indices = std::move(big);
            test_plan.angles = std::move(big_angles);
            valid_plan.from_test_pool = true;
            valid_plan.indices = std::move(small);
            valid_plan.angles = std::move(small_angles);
        } else {
            valid_plan.indices = std::move(big);
            valid_plan.angles = std::move(big_angles);
            test_plan.indices = std::move(small);
            test_plan.angles = std::move(small_angles);
        }
        trim(train_plan, options.max_train);
        trim(valid_plan, options.max_valid);
        trim(test_plan, options.max_test_base);
    }

    DatasetBundle bundle;
    bundle.train.variant = bundle.valid.variant = bundle.test.variant = variant;
    bundle.train.seed = bundle.valid.seed = bundle.test.seed = seed;
    bundle.train.split = "train";
    bundle.valid.split = "valid";
    bundle.test.split = "test";
    materialize(bundle.train, train_plan, source);
    materialize(bundle.valid, valid_plan, source);
    materialize(bundle.test, test_plan, source);
    return bundle;
}

void write_dataset_archive(const RotatedDataset& dataset, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write dataset archive: " + path);
    out.write("HNXDATA1", 8);
    write_pod(out, static_cast<std::uint32_t>(1));
    write_string(out, dataset.variant);
    write_string(out, dataset.split);
    write_pod(out, dataset.seed);
    write_pod(out, static_cast<std::uint64_t>(dataset.size()));
    write_pod(out, static_cast<std::uint64_t>(dataset.height));
    write_pod(out, static_cast<std::uint64_t>(dataset.width));
    out.write(reinterpret_cast<const char*>(dataset.angles.data()),
              static_cast<std::streamsize>(dataset.angles.size() * sizeof(double)));
    out.write(reinterpret_cast<const char*>(dataset.labels.data()),
              static_cast<std::streamsize>(dataset.labels.size()));
    out.write(reinterpret_cast<const char*>(dataset.images.data()),
              static_cast<std::streamsize>(dataset.images.size() * sizeof(float)));
    if (!out) throw DataError("short write on dataset archive: " + path);
}

RotatedDataset read_dataset_archive(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("dataset archive not readable: " + path);
    char magic[8];
    if (!in.read(magic, 8) || std::memcmp(magic, "HNXDATA1", 8) != 0)
        throw FormatError("not a dataset archive: " + path);
    const std::uint32_t version = read_pod<std::uint32_t>(in, path);
    if (version != 1) throw FormatError("unsupported archive version in " + path);
    RotatedDataset ds;
    ds.variant = read_string(in, path);
    ds.split = read_string(in, path);
    ds.seed = read_pod<std::uint64_t>(in, path);
    const std::uint64_t count = read_pod<std::uint64_t>(in, path);
    ds.height = static_cast<int>(read_pod<std::uint64_t>(in, path));
    ds.width = static_cast<int>(read_pod<std::uint64_t>(in, path));
    ds.angles.resize(count);
    ds.labels.resize(count);
    ds.images.resize(count * static_cast<std::size_t>(ds.height) * ds.width);
    if (!in.read(reinterpret_cast<char*>(ds.angles.data()),
                 static_cast<std::streamsize>(count * sizeof(double))))
        throw LengthError("archive truncated (angles): " + path);
    if (!in.read(reinterpret_cast<char*>(ds.labels.data()),
                 static_cast<std::streamsize>(count)))
        throw LengthError("archive truncated (labels): " + path);
    if (!in.read(reinterpret_cast<char*>(ds.images.data()),
                 static_cast<std::streamsize>(ds.images.size() * sizeof(float))))
        throw LengthError("archive truncated (images): " + path);
    return ds;
}

std::uint64_t fnv1a_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot checksum: " + path);
    std::uint64_t hash = 0xcbf29ce484222325ULL;
    char buf[65536];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
        const std::streamsize n = in.gcount();
        for (std::streamsize i = 0; i < n; ++i) {
            hash ^= static_cast<std::uint8_t>(buf[i]);
            hash *= 0x100000001b3ULL;
        }
        if (!in) break;
    }
    return hash;
}

}  // namespace hnext

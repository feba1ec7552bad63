#include "cornerdet/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>

#include "json.hpp"

#include "cornerdet/image.hpp"
#include "cornerdet/nn.hpp"

namespace cornerdet {

namespace pt = boost::property_tree;

const std::vector<std::string>& hardhat_classes() {
    static const std::vector<std::string> names = {"blue", "red", "white", "yellow", "none"};
    return names;
}

namespace {

std::size_t class_index(const std::string& name, const std::vector<std::string>& classes) {
    const auto it = std::find(classes.begin(), classes.end(), name);
    if (it == classes.end()) throw Error("unknown class name '" + name + "'");
    return static_cast<std::size_t>(it - classes.begin());
}

double read_coord(const pt::ptree& bndbox, const char* key) {
    const auto value = bndbox.get_optional<double>(key);
    if (!value) throw Error(std::string("annotation object missing bndbox/") + key);
    return *value;
}

}  // namespace

std::vector<GroundTruthBox> parse_voc_xml(std::string_view xml, const std::vector<std::string>& classes) {
    pt::ptree tree;
    std::istringstream in{std::string(xml)};
    try {
        pt::read_xml(in, tree);
    } catch (const pt::xml_parser_error& e) {
        throw Error("malformed annotation XML at line " + std::to_string(e.line()) + ": " + e.message());
    }
    const auto root = tree.get_child_optional("annotation");
    if (!root) throw Error("annotation XML has no <annotation> root");
    std::vector<GroundTruthBox> out;
    for (const auto& [key, node] : *root) {
        if (key != "object") continue;
        const auto name = node.get_optional<std::string>("name");
        if (!name) throw Error("annotation object without <name>");
        const auto bndbox = node.get_child_optional("bndbox");
        if (!bndbox) throw Error("annotation object '" + *name + "' without <bndbox>");
        GroundTruthBox g;
        g.class_id = class_index(*name, classes);
        g.box = {read_coord(*bndbox, "xmin") - 1.0, read_coord(*bndbox, "ymin") - 1.0,
                 read_coord(*bndbox, "xmax") - 1.0, read_coord(*bndbox, "ymax") - 1.0};
        if (!(g.box.tl_x < g.box.br_x) || !(g.box.tl_y < g.box.br_y)) {
            throw Error("annotation object '" + *name + "' has a degenerate box");
        }
        out.push_back(g);
    }
    return out;
}

std::string write_voc_xml(const std::vector<GroundTruthBox>& boxes, const std::vector<std::string>& classes,
                          std::string_view filename, std::size_t width, std::size_t height) {
    pt::ptree root;
    root.put("filename", std::string(filename));
    root.put("size.width", width);
    root.put("size.height", height);
    root.put("size.depth", 3);
    for (const auto& g : boxes) {
        pt::ptree obj;
        obj.put("name", classes.at(g.class_id));
        obj.put("difficult", 0);
        obj.put("bndbox.xmin", g.box.tl_x + 1.0);
        obj.put("bndbox.ymin", g.box.tl_y + 1.0);
        obj.put("bndbox.xmax", g.box.br_x + 1.0);
        obj.put("bndbox.ymax", g.box.br_y + 1.0);
        root.add_child("object", obj);
    }
    pt::ptree doc;
    doc.add_child("annotation", root);
    std::ostringstream out;
    pt::write_xml(out, doc, pt::xml_writer_make_settings<std::string>(' ', 2));
    return out.str();
}

Splits split_dataset(std::vector<std::string> ids, const SplitSpec& spec) {
    const double total = spec.train + spec.val + spec.test;
    if (std::abs(total - 1.0) > 1e-9 || spec.train < 0 || spec.val < 0 || spec.test < 0) {
        throw Error("split ratios must be non-negative and sum to 1");
    }
    std::mt19937_64 rng(spec.seed);
    for (std::size_t i = ids.size(); i > 1; --i) {
        const std::size_t j = rng() % i;
        std::swap(ids[i - 1], ids[j]);
    }
    const auto n = static_cast<double>(ids.size());
    const auto n_val = static_cast<std::size_t>(std::floor(n * spec.val + 1e-9));
    const auto n_test = static_cast<std::size_t>(std::floor(n * spec.test + 1e-9));
    const std::size_t n_train = ids.size() - n_val - n_test;
    Splits s;
    s.train.assign(ids.begin(), ids.begin() + static_cast<long>(n_train));
    s.val.assign(ids.begin() + static_cast<long>(n_train), ids.begin() + static_cast<long>(n_train + n_val));
    s.test.assign(ids.begin() + static_cast<long>(n_train + n_val), ids.end());
    return s;
}

Background parse_background(std::string_view name) {
    if (name == "noise") return Background::noise;
    if (name == "gradient") return Background::gradient;
    if (name == "texture") return Background::texture;
    throw Error("unknown background style '" + std::string(name) + "' (noise, gradient, texture)");
}

namespace {

// Box height over width for every synthetic head-and-cap figure.
constexpr double kAspect = 1.25;

class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    std::size_t index(std::size_t n) { return static_cast<std::size_t>(engine_() % n); }
    double normal() {
        const double u1 = std::max(uniform(), 1e-300);
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * uniform());
    }

private:
    std::mt19937_64 engine_;
};

Rgb jitter(Rng& rng, Rgb c, double amount) {
    auto j = [&](double v) { return std::clamp(v + rng.uniform(-amount, amount), 0.0, 1.0); };
    return {j(c.r), j(c.g), j(c.b)};
}

Rgb cap_color(const std::string& name) {
    if (name == "yellow") return {0.95, 0.82, 0.10};
    if (name == "blue") return {0.10, 0.30, 0.85};
    if (name == "red") return {0.85, 0.10, 0.10};
    if (name == "white") return {0.95, 0.95, 0.95};
    if (name == "none") return {0.20, 0.13, 0.07};
    // Classes outside the hardhat vocabulary get a hue from their name.
    const auto h = static_cast<double>(std::hash<std::string>{}(name) % 360) / 60.0;
    const double x = 1.0 - std::abs(std::fmod(h, 2.0) - 1.0);
    const std::array<Rgb, 6> wheel = {Rgb{1, x, 0}, Rgb{x, 1, 0}, Rgb{0, 1, x}, Rgb{0, x, 1}, Rgb{x, 0, 1}, Rgb{1, 0, x}};
    return wheel[static_cast<std::size_t>(h) % 6];
}

struct Canvas {
    std::size_t h, w;
    std::vector<double> px;  // planar RGB

    Canvas(std::size_t height, std::size_t width) : h(height), w(width), px(3 * height * width, 0.0) {}
    void set(long x, long y, Rgb c) {
        if (x < 0 || y < 0 || x >= static_cast<long>(w) || y >= static_cast<long>(h)) return;
        const std::size_t i = static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x);
        px[i] = c.r;
        px[h * w + i] = c.g;
        px[2 * h * w + i] = c.b;
    }
    // Fills pixels whose centers fall inside the ellipse, optionally only
    // the half above the center row.
    void ellipse(double cx, double cy, double rx, double ry, Rgb c, bool upper_only) {
        for (long y = static_cast<long>(std::floor(cy - ry)); y <= static_cast<long>(std::ceil(cy + ry)); ++y) {
            if (upper_only && y > cy) break;
            for (long x = static_cast<long>(std::floor(cx - rx)); x <= static_cast<long>(std::ceil(cx + rx)); ++x) {
                const double dx = (x - cx) / rx, dy = (y - cy) / ry;
                if (dx * dx + dy * dy <= 1.0) set(x, y, c);
            }
        }
    }
    void rect(double x0, double y0, double x1, double y1, Rgb c) {
        for (long y = std::lround(y0); y <= std::lround(y1); ++y) {
            for (long x = std::lround(x0); x <= std::lround(x1); ++x) set(x, y, c);
        }
    }
};

void paint_background(Canvas& cv, Rng& rng, Background style) {
    const Rgb a{rng.uniform(0.25, 0.65), rng.uniform(0.25, 0.65), rng.uniform(0.25, 0.65)};
    const Rgb b{rng.uniform(0.25, 0.65), rng.uniform(0.25, 0.65), rng.uniform(0.25, 0.65)};
    const double angle = rng.uniform(0.0, 2.0 * M_PI);
    const double freq = rng.uniform(0.15, 0.5);
    for (std::size_t y = 0; y < cv.h; ++y) {
        for (std::size_t x = 0; x < cv.w; ++x) {
            double t = 0.0, noise = 0.0;
            switch (style) {
                case Background::gradient:
                    t = 0.5 + 0.5 * ((std::cos(angle) * x / cv.w) + (std::sin(angle) * y / cv.h));
                    noise = 0.02 * rng.normal();
                    break;
                case Background::noise:
                    t = 0.5;
                    noise = 0.08 * rng.normal();
                    break;
                case Background::texture:
                    t = 0.5 + 0.5 * std::sin(freq * (std::cos(angle) * x + std::sin(angle) * y)) *
                                  std::cos(freq * 0.7 * (std::sin(angle) * x - std::cos(angle) * y));
                    noise = 0.02 * rng.normal();
                    break;
            }
            t = std::clamp(t, 0.0, 1.0);
            auto mix = [&](double u, double v) { return std::clamp(u * (1 - t) + v * t + noise, 0.0, 1.0); };
            cv.set(static_cast<long>(x), static_cast<long>(y), {mix(a.r, b.r), mix(a.g, b.g), mix(a.b, b.b)});
        }
    }
}

// Width in pixels of the next figure, in [lo, hi].
double draw_width(Rng& rng, const SynthConfig& cfg, double hi) {
    if (!cfg.bucket_balanced) return rng.uniform(cfg.min_box, std::min(cfg.max_box, hi));
    const double lo_area = kAspect * cfg.min_box * cfg.min_box;
    const double hi_area = kAspect * hi * hi;
    const std::array<std::pair<double, double>, 3> buckets = {
        std::pair{0.0, 1024.0}, std::pair{1024.0, 9216.0}, std::pair{9216.0, 1e300}};
    std::vector<std::pair<double, double>> feasible;
    for (const auto& [a, b] : buckets) {
        const double l = std::max(a, lo_area), u = std::min(b, hi_area);
        if (l < u) feasible.emplace_back(l, u);
    }
    const auto [l, u] = feasible[rng.index(feasible.size())];
    return std::sqrt(rng.uniform(l, u) / kAspect);
}

bool overlaps(const Box& a, const Box& b) {
    return a.tl_x <= b.br_x && b.tl_x <= a.br_x && a.tl_y <= b.br_y && b.tl_y <= a.br_y;
}

}  // namespace

void SynthConfig::validate() const {
    if (height < 16 || width < 16) throw Error("synth config: image must be at least 16x16");
    if (classes.empty()) throw Error("synth config: empty class list");
    if (min_objects == 0 || min_objects > max_objects) throw Error("synth config: bad object count range");
    if (!(min_box >= 4.0) || min_box > max_box) throw Error("synth config: bad box size range");
    if (min_box * kAspect > static_cast<double>(height) - 2.0 || min_box > static_cast<double>(width) - 2.0) {
        throw Error("synth config: min_box does not fit the image");
    }
}

Sample generate_synthetic_sample(const SynthConfig& cfg, std::size_t index) {
    cfg.validate();
    Rng rng(mix_seed(cfg.seed, index));
    Canvas cv(cfg.height, cfg.width);
    paint_background(cv, rng, cfg.background);

    const double fit = std::min(static_cast<double>(cfg.width) - 1.0, (static_cast<double>(cfg.height) - 1.0) / kAspect);
    const std::size_t wanted = cfg.min_objects + rng.index(cfg.max_objects - cfg.min_objects + 1);
    Sample s;
    s.id = "synth_" + std::to_string(index);
    std::vector<Box> occupied;
    for (std::size_t k = 0; k < wanted; ++k) {
        for (int attempt = 0; attempt < 50; ++attempt) {
            const double w = std::floor(draw_width(rng, cfg, fit));
            const double h = std::floor(w * kAspect);
            const double x0 = std::floor(rng.uniform(0.0, static_cast<double>(cfg.width) - 1.0 - w + 1.0));
            const double y0 = std::floor(rng.uniform(0.0, static_cast<double>(cfg.height) - 1.0 - h + 1.0));
            const Box box{x0, y0, x0 + w, y0 + h};
            // The torso hangs below the head; keep it clear of other figures.
            const Box body{x0 - 0.25 * w, y0 + 0.9 * h, x0 + 1.25 * w, y0 + 2.5 * h};
            const Box extent{body.tl_x, y0, body.br_x, body.br_y};
            if (std::any_of(occupied.begin(), occupied.end(), [&](const Box& o) { return overlaps(o, extent); })) {
                continue;
            }
            occupied.push_back(extent);

            const std::size_t cls = rng.index(cfg.classes.size());
            const bool bare = cfg.classes[cls] == "none";
            const Rgb vest = jitter(rng, rng.uniform() < 0.5 ? Rgb{0.95, 0.45, 0.1} : Rgb{0.35, 0.8, 0.2}, 0.08);
            const Rgb skin = jitter(rng, {0.87, 0.70, 0.55}, 0.08);
            const Rgb cap = jitter(rng, cap_color(cfg.classes[cls]), 0.05);
            const double cx = x0 + 0.5 * w;
            cv.rect(body.tl_x, body.tl_y, body.br_x, body.br_y, vest);
            cv.ellipse(cx, y0 + 0.65 * h, 0.42 * w, 0.35 * h, skin, false);
            cv.ellipse(cx, y0 + 0.4 * h, 0.5 * w, 0.4 * h, cap, true);
            if (!bare) cv.rect(x0, y0 + 0.4 * h, x0 + w, y0 + 0.4 * h + std::max(1.0, 0.06 * h), cap);
            s.boxes.push_back({box, cls});
            break;
        }
    }
    s.image = Tensor::from_data({1, 3, cfg.height, cfg.width}, std::move(cv.px));
    return s;
}

std::vector<Sample> generate_synthetic(const SynthConfig& config, std::size_t count) {
    std::vector<Sample> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) out.push_back(generate_synthetic_sample(config, i));
    return out;
}

Sample flip_augment(const Sample& sample) {
    const Shape& s = sample.image.shape();
    const auto in = sample.image.data();
    std::vector<double> out(in.size());
    for (std::size_t p = 0; p < s.n * s.c; ++p) {
        for (std::size_t i = 0; i < s.h; ++i) {
            const double* row = in.data() + p * s.plane() + i * s.w;
            double* orow = out.data() + p * s.plane() + i * s.w;
            for (std::size_t j = 0; j < s.w; ++j) orow[j] = row[s.w - 1 - j];
        }
    }
    Sample r;
    r.id = sample.id;
    r.image = Tensor::from_data(s, std::move(out));
    const double last = static_cast<double>(s.w) - 1.0;
    for (const auto& g : sample.boxes) {
        r.boxes.push_back({{last - g.box.br_x, g.box.tl_y, last - g.box.tl_x, g.box.br_y}, g.class_id});
    }
    return r;
}

Sample resize_sample(const Sample& sample, std::size_t height, std::size_t width) {
    const Shape& s = sample.image.shape();
    Sample r;
    r.id = sample.id;
    r.image = resize_bilinear(sample.image, height, width);
    const double sx = static_cast<double>(width) / static_cast<double>(s.w);
    const double sy = static_cast<double>(height) / static_cast<double>(s.h);
    for (const auto& g : sample.boxes) r.boxes.push_back({scale_box(g.box, sx, sy), g.class_id});
    return r;
}

namespace {

std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot read '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out || !(out << text)) throw Error("cannot write '" + path.string() + "'");
}

}  // namespace

DatasetLayout DatasetLayout::open(const std::filesystem::path& root) {
    const std::filesystem::path splits_path = root / "splits.json";
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_text(splits_path));
    } catch (const nlohmann::json::exception& e) {
        throw Error("malformed '" + splits_path.string() + "': " + e.what());
    }
    DatasetLayout d;
    d.root = root;
    try {
        d.classes = j.at("classes").get<std::vector<std::string>>();
        d.splits.train = j.value("train", std::vector<std::string>{});
        d.splits.val = j.value("val", std::vector<std::string>{});
        d.splits.test = j.value("test", std::vector<std::string>{});
    } catch (const nlohmann::json::exception& e) {
        throw Error("bad schema in '" + splits_path.string() + "': " + e.what());
    }
    return d;
}

const std::vector<std::string>& DatasetLayout::split(std::string_view name) const {
    if (name == "train") return splits.train;
    if (name == "val") return splits.val;
    if (name == "test") return splits.test;
    throw Error("unknown split '" + std::string(name) + "' (train, val, test)");
}

Sample DatasetLayout::load(const std::string& id, std::size_t height, std::size_t width) const {
    std::filesystem::path image_path;
    for (const char* ext : {".png", ".ppm", ".jpg", ".jpeg"}) {
        const auto candidate = root / "images" / (id + ext);
        if (std::filesystem::exists(candidate)) {
            image_path = candidate;
            break;
        }
    }
    if (image_path.empty()) throw Error("no image for id '" + id + "' under " + (root / "images").string());
    const auto xml_path = root / "annotations" / (id + ".xml");
    Sample s;
    s.id = id;
    s.image = read_image(image_path);
    try {
        s.boxes = parse_voc_xml(read_text(xml_path), classes);
    } catch (const Error& e) {
        throw Error(xml_path.string() + ": " + e.what());
    }
    return resize_sample(s, height, width);
}

void write_dataset(const std::filesystem::path& root, const std::vector<Sample>& samples,
                   const std::vector<std::string>& classes, const Splits& splits) {
    std::error_code ec;
    std::filesystem::create_directories(root / "images", ec);
    std::filesystem::create_directories(root / "annotations", ec);
    if (ec) throw Error("cannot create dataset directory '" + root.string() + "': " + ec.message());
    for (const Sample& s : samples) {
        write_image(root / "images" / (s.id + ".png"), s.image);
        write_text(root / "annotations" / (s.id + ".xml"),
                   write_voc_xml(s.boxes, classes, s.id + ".png", s.image.shape().w, s.image.shape().h));
    }
    const nlohmann::json j = {{"classes", classes}, {"train", splits.train}, {"val", splits.val}, {"test", splits.test}};
    write_text(root / "splits.json", j.dump(2) + "\n");
}

}  // namespace cornerdet

"""
Categorized co-clustering heatmap as SVG.
"""
from lxml import etree

SVG_NS = 'http://www.w3.org/2000/svg'
BIN_COLOURS = ['#ffffff', '#c6dbef', '#6baed6', '#2171b5', '#08306b']
CELL = 28
MARGIN = 40


def _colour(k, nbins):
    if nbins <= len(BIN_COLOURS):
        return BIN_COLOURS[k]
    shade = int(255 - 255 * k / max(nbins - 1, 1))
    return '#{0:02x}{0:02x}{0:02x}'.format(shade)


def _label(x, y, text, anchor='middle'):
    node = etree.Element('{%s}text' % SVG_NS, x=str(x), y=str(y))
    node.set('text-anchor', anchor)
    node.set('font-size', '11')
    node.set('font-family', 'sans-serif')
    node.text = text
    return node


def similarity_svg(sm):
    """
    Render a SimilarityMatrix as an L x L grid of binned cells, study ids on
    both axes, legend on the right. Returns UTF-8 bytes.
    """
    L = len(sm.ids)
    nbins = len(sm.bins) - 1
    legend_x = MARGIN + L * CELL + 20
    width = legend_x + 120
    height = max(MARGIN + L * CELL + 10, MARGIN + nbins * 18 + 30)

    root = etree.Element('{%s}svg' % SVG_NS, nsmap={None: SVG_NS},
                         width=str(width), height=str(height))
    root.set('viewBox', '0 0 {} {}'.format(width, height))
    title = etree.SubElement(root, '{%s}title' % SVG_NS)
    title.text = 'Posterior probability that two studies share a cluster ({})'.format(
        sm.source.value)

    grid = etree.SubElement(root, '{%s}g' % SVG_NS, id='cells')
    categories = sm.categories()
    for i in range(L):
        for j in range(L):
            k = int(categories[i, j])
            rect = etree.SubElement(grid, '{%s}rect' % SVG_NS,
                                    x=str(MARGIN + j * CELL), y=str(MARGIN + i * CELL),
                                    width=str(CELL), height=str(CELL),
                                    fill=_colour(k, nbins), stroke='#888888')
            rect.set('class', 'bin-{}'.format(k))
            rect.set('data-row', str(sm.ids[i]))
            rect.set('data-col', str(sm.ids[j]))
            rect.set('data-p', '{:.4f}'.format(sm.matrix[i, j]))

    axes = etree.SubElement(root, '{%s}g' % SVG_NS, id='axes')
    for i, study_id in enumerate(sm.ids):
        axes.append(_label(MARGIN + i * CELL + CELL // 2, MARGIN - 8, str(study_id)))
        axes.append(_label(MARGIN - 8, MARGIN + i * CELL + CELL // 2 + 4, str(study_id),
                           anchor='end'))

    legend = etree.SubElement(root, '{%s}g' % SVG_NS, id='legend')
    for k in range(nbins):
        y = MARGIN + k * 18
        etree.SubElement(legend, '{%s}rect' % SVG_NS, x=str(legend_x), y=str(y),
                         width='14', height='14', fill=_colour(k, nbins), stroke='#888888')
        close = ']' if k == nbins - 1 else ')'
        legend.append(_label(legend_x + 20, y + 11,
                             '[{:.1f}, {:.1f}{}'.format(sm.bins[k], sm.bins[k + 1], close),
                             anchor='start'))
    return etree.tostring(root, pretty_print=True, xml_declaration=True, encoding='utf-8')
